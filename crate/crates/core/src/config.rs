//! Training configuration in a flat `key = value` text format.
//!
//! A config file must set every key exactly once; `#` starts a comment.
//! [`Config::default`] is the calibrated default and [`Config::to_text`]
//! prints it in the same format, so a printed config round-trips.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::data::NormMode;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, Ablation, LossWeights, TargetMode};
use crate::nets::Architecture;

/// How the self-expressive coefficients start the joint stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CInit {
    /// Exact ridge solution on the pretrained posterior means.
    Ridge,
    Zeros,
}

impl FromStr for CInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(CInit::Ridge),
            "zeros" => Ok(CInit::Zeros),
            other => Err(Error::invalid(format!("c_init must be ridge or zeros, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for CInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CInit::Ridge => "ridge",
            CInit::Zeros => "zeros",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub arch: Architecture,
    /// One value shared by every view, or one per view.
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_se: f64,
    /// Encoder gradient paths through the predictability term.
    pub specific_grad: TargetMode,
    pub lr: f64,
    pub lr_selfexpr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub pretrain_steps: usize,
    pub train_steps: usize,
    /// Critic steps per main step.
    pub critic_steps: usize,
    pub batch_ceiling: usize,
    pub threads: usize,
    pub precision: String,
    pub normalization: NormMode,
    pub c_init: CInit,
    pub seed: u64,
    pub ablate: Vec<Ablation>,
    /// Number of clusters; 0 takes it from the dataset labels.
    pub clusters: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            arch: Architecture::default(),
            lambda: vec![0.01],
            alpha: 0.1,
            beta: 1.0,
            gamma: 0.02,
            lambda_se: 1.0,
            specific_grad: TargetMode::Detached,
            lr: 1e-3,
            lr_selfexpr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            pretrain_steps: 400,
            train_steps: 600,
            critic_steps: 1,
            batch_ceiling: 3000,
            threads: 1,
            precision: "f64".into(),
            normalization: NormMode::Zscore,
            c_init: CInit::Ridge,
            seed: 0,
            ablate: Vec::new(),
            clusters: 0,
        }
    }
}

/// Every key with its one-line description, in file order.
pub const KEYS: [(&str, &str); 27] = [
    ("trunk_hidden", "encoder trunk hidden widths, comma-separated"),
    ("feature_dim", "width of the encoder feature h"),
    ("code_dim", "width of z_c and z_s"),
    ("critic_hidden", "hidden width of discriminators and predictors"),
    ("bounded_specific", "squash z_s with tanh: true or false"),
    ("lambda", "bottleneck weight, one value or one per view"),
    ("alpha", "weight of the view-specific predictability term"),
    ("beta", "weight of the reconstruction term"),
    ("gamma", "weight of the self-expression term"),
    ("lambda_se", "Frobenius penalty on C inside the self-expression term"),
    ("specific_grad", "encoder paths through l_s: detached, specific or joint"),
    ("lr", "Adam step size for networks and critics"),
    ("lr_selfexpr", "Adam step size for the coefficient matrices"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator offset"),
    ("pretrain_steps", "autoencoder pretraining steps"),
    ("train_steps", "joint training steps"),
    ("critic_steps", "critic steps per main step"),
    ("batch_ceiling", "largest n accepted for full-batch training"),
    ("threads", "1 = sequential numerics, otherwise the parallel pool"),
    ("precision", "floating-point precision (only f64)"),
    ("normalization", "per-view column normalization: zscore, minmax, none"),
    ("c_init", "start of C for the joint stage: ridge or zeros"),
    ("seed", "master seed"),
    ("ablate", "comma-separated drop flags, or none"),
    ("clusters", "number of clusters, 0 = from labels"),
];

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| scalar(key, s))
        .collect()
}

fn scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| Error::Parse {
        context: format!("config key `{key}`"),
        message: format!("`{v}`: {e}"),
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "trunk_hidden" => self.arch.trunk_hidden = list(key, value)?,
            "feature_dim" => self.arch.feature_dim = scalar(key, value)?,
            "code_dim" => self.arch.code_dim = scalar(key, value)?,
            "critic_hidden" => self.arch.critic_hidden = scalar(key, value)?,
            "bounded_specific" => self.arch.bounded_specific = scalar(key, value)?,
            "lambda" => self.lambda = list(key, value)?,
            "alpha" => self.alpha = scalar(key, value)?,
            "beta" => self.beta = scalar(key, value)?,
            "gamma" => self.gamma = scalar(key, value)?,
            "lambda_se" => self.lambda_se = scalar(key, value)?,
            "specific_grad" => self.specific_grad = scalar(key, value)?,
            "lr" => self.lr = scalar(key, value)?,
            "lr_selfexpr" => self.lr_selfexpr = scalar(key, value)?,
            "adam_beta1" => self.adam_beta1 = scalar(key, value)?,
            "adam_beta2" => self.adam_beta2 = scalar(key, value)?,
            "adam_eps" => self.adam_eps = scalar(key, value)?,
            "pretrain_steps" => self.pretrain_steps = scalar(key, value)?,
            "train_steps" => self.train_steps = scalar(key, value)?,
            "critic_steps" => self.critic_steps = scalar(key, value)?,
            "batch_ceiling" => self.batch_ceiling = scalar(key, value)?,
            "threads" => self.threads = scalar(key, value)?,
            "precision" => self.precision = value.trim().to_string(),
            "normalization" => self.normalization = scalar(key, value)?,
            "c_init" => self.c_init = scalar(key, value)?,
            "seed" => self.seed = scalar(key, value)?,
            "ablate" => self.ablate = losses::parse_ablations(value)?,
            "clusters" => self.clusters = scalar(key, value)?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "trunk_hidden" => join(&self.arch.trunk_hidden),
            "feature_dim" => self.arch.feature_dim.to_string(),
            "code_dim" => self.arch.code_dim.to_string(),
            "critic_hidden" => self.arch.critic_hidden.to_string(),
            "bounded_specific" => self.arch.bounded_specific.to_string(),
            "lambda" => join(&self.lambda),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "gamma" => self.gamma.to_string(),
            "lambda_se" => self.lambda_se.to_string(),
            "specific_grad" => self.specific_grad.to_string(),
            "lr" => self.lr.to_string(),
            "lr_selfexpr" => self.lr_selfexpr.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "pretrain_steps" => self.pretrain_steps.to_string(),
            "train_steps" => self.train_steps.to_string(),
            "critic_steps" => self.critic_steps.to_string(),
            "batch_ceiling" => self.batch_ceiling.to_string(),
            "threads" => self.threads.to_string(),
            "precision" => self.precision.clone(),
            "normalization" => self.normalization.to_string(),
            "c_init" => self.c_init.to_string(),
            "seed" => self.seed.to_string(),
            "ablate" => {
                if self.ablate.is_empty() {
                    "none".into()
                } else {
                    self.ablate.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(",")
                }
            }
            "clusters" => self.clusters.to_string(),
            _ => return Err(Error::UnknownKey(key.to_string())),
        })
    }

    /// Parses a complete config; every key must appear exactly once.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    context: format!("config line {}", lineno + 1),
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let k = k.trim();
            cfg.set(k, v.trim())?;
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse {
                    context: format!("config line {}", lineno + 1),
                    message: format!("key `{k}` set twice"),
                });
            }
        }
        if let Some((missing, _)) = Self::keys().find(|(k, _)| !seen.contains(*k)) {
            return Err(Error::MissingKey(missing.to_string()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    fn keys() -> impl Iterator<Item = (&'static str, &'static str)> {
        KEYS.iter().copied()
    }

    /// Documented listing, parseable by [`Config::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, doc) in Self::keys() {
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_selfexpr", self.lr_selfexpr),
            ("adam_eps", self.adam_eps),
            ("lambda_se", self.lambda_se),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{k} must be a finite value > 0 (got {v})")));
            }
        }
        for (k, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{k} must lie in [0, 1) (got {v})")));
            }
        }
        if self.lambda.is_empty() {
            return Err(Error::invalid("lambda needs at least one value"));
        }
        if self.critic_steps == 0 && self.train_steps > 0 {
            return Err(Error::invalid("critic_steps must be >= 1"));
        }
        if self.precision != "f64" {
            return Err(Error::invalid(format!(
                "precision `{}` is not supported; only f64 is implemented",
                self.precision
            )));
        }
        if self.arch.code_dim == 0 || self.arch.feature_dim == 0 || self.arch.critic_hidden == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if self.batch_ceiling == 0 {
            return Err(Error::invalid("batch_ceiling must be positive"));
        }
        self.weights(1.max(self.lambda.len()))?.validate()
    }

    /// Loss weights for `views` views; a single lambda is broadcast.
    pub fn weights(&self, views: usize) -> Result<LossWeights> {
        let lambda = match self.lambda.len() {
            1 => vec![self.lambda[0]; views],
            l if l == views => self.lambda.clone(),
            l => {
                return Err(Error::invalid(format!(
                    "lambda lists {l} values for {views} views"
                )))
            }
        };
        let w = LossWeights {
            lambda,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            lambda_se: self.lambda_se,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn exec(&self) -> Exec {
        Exec::from_threads(self.threads)
    }
}
