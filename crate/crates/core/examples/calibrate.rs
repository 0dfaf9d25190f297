//! Calibration sweep on the default synthetic benchmark.
//!
//! ```text
//! cargo run --release -p mvsc-core --example calibrate -- seeds=0,1 gamma=0.05 train_steps=800
//! ```
//!
//! Every `key=value` argument except `seeds` is a config override. Per seed
//! it prints the ridge baseline on the raw views, the trained model's
//! metrics and the matched-sample cosines behind the correlation check.

use std::time::Instant;

use mvsc_core::config::Config;
use mvsc_core::data::{generate_synthetic, SynthSpec};
use mvsc_core::{metrics, selfexpr, trainer};

fn main() -> mvsc_core::Result<()> {
    let mut cfg = Config::default();
    let mut seeds = vec![0u64];
    for arg in std::env::args().skip(1) {
        let Some((k, v)) = arg.split_once('=') else {
            eprintln!("expected key=value, got `{arg}`");
            std::process::exit(1);
        };
        if k == "seeds" {
            seeds = v.split(',').map(|s| s.trim().parse().expect("integer seed")).collect();
        } else {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;

    for &seed in &seeds {
        let ds = generate_synthetic(&SynthSpec::default_benchmark(seed))?;
        let cfg = Config { seed, ..cfg.clone() };
        let k = trainer::resolve_k(&ds, &cfg)?;
        let start = Instant::now();

        let raw = trainer::prepare_views(&ds, &cfg)?
            .iter()
            .map(|x| selfexpr::ridge_selfexpr_dual(x, cfg.lambda_se, cfg.exec()))
            .collect::<mvsc_core::Result<Vec<_>>>()?;
        let base = trainer::cluster_matrices(raw, ds.labels.as_deref(), k, seed, &cfg)?;

        let (trained, result) = trainer::fit_and_cluster(&ds, &cfg)?;
        let codes = trained.codes(&ds)?;
        let common = metrics::matched_abs_cosine(&codes[0].0, &codes[1].0)?;
        let cross = metrics::matched_abs_cosine(&codes[0].0, &codes[0].1)?;
        let (b, m) = (base.metrics.expect("labelled"), result.metrics.expect("labelled"));
        println!(
            "seed {seed}: raw-view acc {:.3} | acc {:.3} nmi {:.3} ari {:.3} | cos zc-zc {common:.3} zc-zs {cross:.3} | {:.1}s",
            b.acc,
            m.acc,
            m.nmi,
            m.ari,
            start.elapsed().as_secs_f64()
        );
        if let Some(last) = trained.log.last() {
            let cells: Vec<String> = mvsc_core::LossReport::KEYS
                .iter()
                .zip(last.values())
                .map(|(k, v)| format!("{k} {v:.4}"))
                .collect();
            println!("  final losses: {}", cells.join(", "));
        }
    }
    Ok(())
}
