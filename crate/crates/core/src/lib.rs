//! Multi-view subspace clustering with information-theoretic separation of
//! view-common and view-specific codes.
//!
//! Pipeline: [`data`] loads or synthesizes aligned views, [`nets`] holds the
//! per-view encoders, decoders and critics, [`losses`] assembles the
//! objective from the [`mi`] and [`selfexpr`] primitives, [`trainer`]
//! optimizes it and clusters the fused self-expressive affinity, and
//! [`metrics`] scores the result. [`oracle`] provides brute-force references
//! used by the verification suites.
//!
//! The `parallel` feature (on by default) runs independent work items (ridge
//! columns, k-means restarts, Monte-Carlo chunks) on rayon. Results are
//! collected in index order, so both execution modes give bitwise identical
//! output.

pub mod config;
pub mod data;
pub mod error;
pub mod exec;
pub mod losses;
pub mod metrics;
pub mod mi;
pub mod nets;
pub mod oracle;
pub mod rng;
pub mod selfexpr;
pub mod tape;
pub mod trainer;

pub use config::Config;
pub use data::{MultiViewDataset, SynthSpec};
pub use error::{Error, Result};
pub use exec::Exec;
pub use losses::{Ablation, LossReport, LossWeights};
pub use metrics::MetricsReport;
pub use nets::{Architecture, Model, ParamStore};
pub use trainer::{ClusterResult, TrainedModel};
