//! Two-stage optimization and clustering.
//!
//! Stage one pretrains each view's autoencoder on `(z_s, z_c)` with the
//! bottleneck term. Stage two is full-batch joint training: each step runs
//! `critic_steps` critic updates (discriminators and predictors ascend their
//! objectives on frozen codes) and then one main update of the encoders,
//! decoders and coefficient matrices on the total loss with critics frozen.
//! A run is a pure function of the dataset and the config.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::{CInit, Config};
use crate::data::{self, MultiViewDataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{self, Ablation, CriticInputs, Draws, EffectiveWeights, LossReport, Term};
use crate::metrics::{self, MetricsReport};
use crate::nets::{self, Model, ParamStore};
use crate::rng;
use crate::selfexpr::{self, Affinity, SelfExprMatrix};

/// Adam over a named parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(cfg: &Config) -> Self {
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// Descends along `grads`; `lr(name)` gives each tensor's step size.
    /// Tensors absent from `grads` are untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: impl Fn(&str) -> f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.dim() != g.dim() {
                return Err(Error::shape(format!("gradient for `{name}` has the wrong shape")));
            }
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Array2::zeros(g.dim()));
                self.v.insert(name.clone(), Array2::zeros(g.dim()));
            }
            let m = self.m.get_mut(name)?;
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v.get_mut(name)?;
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let (m, v) = (self.m.get(name)?, self.v.get(name)?);
            let step = lr(name);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                *p -= step * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
        Ok(())
    }
}

fn is_main(name: &str) -> bool {
    name.starts_with("enc.") || name.starts_with("dec.") || name.starts_with("selfexpr.")
}

fn require_finite(what: &str, step: usize, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became non-finite at step {step}")))
    }
}

/// Pretraining log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainRecord {
    pub step: usize,
    pub total: f64,
    pub reconstruction: f64,
}

/// Views after the configured normalization, checked against the ceiling.
pub fn prepare_views(dataset: &MultiViewDataset, cfg: &Config) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    if dataset.n() > cfg.batch_ceiling {
        return Err(Error::invalid(format!(
            "n = {} exceeds the full-batch ceiling {}; raise batch_ceiling (memory grows as n^2) or subsample",
            dataset.n(),
            cfg.batch_ceiling
        )));
    }
    if dataset.n() < 2 {
        return Err(Error::invalid("training needs at least two samples"));
    }
    Ok(data::normalize_views(dataset, cfg.normalization).views)
}

pub fn build_model(dataset: &MultiViewDataset, cfg: &Config) -> Result<Model> {
    Model::new(cfg.arch.clone(), dataset.view_dims())
}

/// Trains encoders and decoders on reconstruction plus the bottleneck term.
pub fn pretrain_params(
    model: &Model,
    params: &mut ParamStore,
    views: &[Array2<f64>],
    cfg: &Config,
) -> Result<Vec<PretrainRecord>> {
    let w = EffectiveWeights::new(&cfg.weights(model.num_views())?, &cfg.ablate)?;
    let n = views[0].nrows();
    let mut opt = Adam::new(cfg);
    let mut log = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        let draws = Draws::sample(model, n, cfg.seed, rng::streams::PRETRAIN_NOISE, step as u64)?;
        let (total, reconstruction, grads) = losses::pretrain_value_and_grad(model, params, views, &draws, &w)?;
        require_finite("pretraining loss", step, total)?;
        opt.step(params, &grads, |_| cfg.lr)?;
        log.push(PretrainRecord {
            step,
            total,
            reconstruction,
        });
    }
    Ok(log)
}

/// Fresh parameters followed by pretraining.
pub fn pretrain(dataset: &MultiViewDataset, cfg: &Config) -> Result<(ParamStore, Vec<PretrainRecord>)> {
    let views = prepare_views(dataset, cfg)?;
    let model = build_model(dataset, cfg)?;
    let mut params = model.init_params(cfg.seed);
    let log = pretrain_params(&model, &mut params, &views, cfg)?;
    Ok((params, log))
}

/// Sets up `selfexpr.{v}` for every view from the current encoders.
pub fn init_selfexpr(model: &Model, params: &mut ParamStore, views: &[Array2<f64>], cfg: &Config) -> Result<()> {
    let n = views[0].nrows();
    let zero = Array2::zeros((n, model.arch.code_dim));
    for (v, x) in views.iter().enumerate() {
        let c = match cfg.c_init {
            CInit::Zeros => Array2::zeros((n, n)),
            CInit::Ridge => {
                let code = model.encode(params, v, x, &zero)?;
                selfexpr::ridge_selfexpr_dual(&code.code.mean, cfg.lambda_se, cfg.exec())?.into_matrix()
            }
        };
        params.insert(nets::selfexpr_name(v), c);
    }
    Ok(())
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub params: ParamStore,
    pub config: Config,
    pub pretrain_log: Vec<PretrainRecord>,
    pub log: Vec<LossReport>,
}

impl TrainedModel {
    pub fn selfexpr_matrices(&self) -> Result<Vec<SelfExprMatrix>> {
        (0..self.model.num_views())
            .map(|v| SelfExprMatrix::new(self.params.get(&nets::selfexpr_name(v))?.clone(), v))
            .collect()
    }

    /// Posterior-mean codes `(z_c, z_s)` per view for `dataset`.
    pub fn codes(&self, dataset: &MultiViewDataset) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
        let views = data::normalize_views(dataset, self.config.normalization).views;
        let zero = Array2::zeros((dataset.n(), self.model.arch.code_dim));
        views
            .iter()
            .enumerate()
            .map(|(v, x)| {
                let c = self.model.encode(&self.params, v, x, &zero)?;
                Ok((c.code.mean, c.zs))
            })
            .collect()
    }
}

/// Joint training from already-initialized parameters; `params` must hold
/// every `selfexpr.{v}`.
pub fn train_params(
    model: &Model,
    params: &mut ParamStore,
    views: &[Array2<f64>],
    cfg: &Config,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<Vec<LossReport>> {
    let w = EffectiveWeights::new(&cfg.weights(model.num_views())?, &cfg.ablate)?;
    let n = views[0].nrows();
    let mut critic_opt = Adam::new(cfg);
    let mut main_opt = Adam::new(cfg);
    let lr_main = |name: &str| {
        if name.starts_with("selfexpr.") {
            cfg.lr_selfexpr
        } else {
            cfg.lr
        }
    };
    let mut log = Vec::with_capacity(cfg.train_steps);
    for step in 0..cfg.train_steps {
        let draws = Draws::sample(model, n, cfg.seed, rng::streams::NOISE, step as u64)?;

        let codes = CriticInputs::from_encoders(model, params, views, &draws)?;
        for _ in 0..cfg.critic_steps {
            if let Some((value, grads)) = losses::critic_value_and_grad(model, params, &codes, &draws, &w)? {
                require_finite("critic objective", step, value)?;
                critic_opt.step(params, &grads, |_| cfg.lr)?;
            }
        }

        let (report, _, grads) =
            losses::term_value_and_grad(model, params, views, &draws, &w, cfg.specific_grad, Term::Total)?;
        if !report.is_finite() {
            return Err(Error::Numeric(format!("loss became non-finite at step {step}: {report:?}")));
        }
        let main = grads.filter(is_main);
        main_opt.step(params, &main, lr_main)?;
        for v in 0..model.num_views() {
            let c = params.get_mut(&nets::selfexpr_name(v))?;
            c.diag_mut().fill(0.0);
        }
        on_step(step, &report);
        log.push(report);
    }
    if !params.all_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok(log)
}

/// Full protocol: init, pretrain, initialize `C`, joint training.
pub fn train(dataset: &MultiViewDataset, cfg: &Config) -> Result<TrainedModel> {
    train_with(dataset, cfg, |_, _| {})
}

pub fn train_with(
    dataset: &MultiViewDataset,
    cfg: &Config,
    on_step: impl FnMut(usize, &LossReport),
) -> Result<TrainedModel> {
    let views = prepare_views(dataset, cfg)?;
    let model = build_model(dataset, cfg)?;
    let mut params = model.init_params(cfg.seed);
    let pretrain_log = pretrain_params(&model, &mut params, &views, cfg)?;
    init_selfexpr(&model, &mut params, &views, cfg)?;
    let log = train_params(&model, &mut params, &views, cfg, on_step)?;
    Ok(TrainedModel {
        model,
        params,
        config: cfg.clone(),
        pretrain_log,
        log,
    })
}

#[derive(Debug, Clone)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    pub affinity: Affinity,
    pub c: Vec<SelfExprMatrix>,
    pub metrics: Option<MetricsReport>,
}

/// Number of clusters from the config, falling back to the labels.
pub fn resolve_k(dataset: &MultiViewDataset, cfg: &Config) -> Result<usize> {
    match (cfg.clusters, dataset.num_classes()) {
        (0, Some(k)) => Ok(k),
        (0, None) => Err(Error::invalid("clusters = 0 needs a labelled dataset")),
        (k, _) => Ok(k),
    }
}

/// Fuses the per-view coefficients and runs spectral clustering.
pub fn cluster(trained: &TrainedModel, dataset: &MultiViewDataset, k: usize) -> Result<ClusterResult> {
    let c = trained.selfexpr_matrices()?;
    if c.first().map(SelfExprMatrix::n) != Some(dataset.n()) {
        return Err(Error::shape("trained coefficients do not match the dataset size"));
    }
    cluster_matrices(c, dataset.labels.as_deref(), k, trained.config.seed, &trained.config)
}

pub fn cluster_matrices(
    c: Vec<SelfExprMatrix>,
    truth: Option<&[usize]>,
    k: usize,
    seed: u64,
    cfg: &Config,
) -> Result<ClusterResult> {
    let n = c.first().map_or(0, SelfExprMatrix::n);
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let affinity = selfexpr::fuse_affinities(&c)?;
    let labels = selfexpr::spectral_cluster(
        &affinity,
        k,
        rng::derive_seed(seed, rng::streams::CLUSTER, 0),
        cfg.exec(),
    )?;
    let metrics = truth.map(|t| metrics::evaluate(t, &labels)).transpose()?;
    Ok(ClusterResult {
        labels,
        affinity,
        c,
        metrics,
    })
}

pub const LOG_FILE: &str = "train_log.csv";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const AFFINITY_FILE: &str = "affinity.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const METRICS_FILE: &str = "metrics.json";

pub fn loss_log_csv(log: &[LossReport]) -> String {
    let mut out = format!("step,{}\n", LossReport::KEYS.join(","));
    for (i, r) in log.iter().enumerate() {
        let row: Vec<String> = r.values().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&format!("{i},{}\n", row.join(",")));
    }
    out
}

/// Writes the run directory and returns the written paths.
pub fn write_run_dir(dir: &Path, trained: &TrainedModel, result: &ClusterResult) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let config_text = trained.config.to_text();
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put(CONFIG_FILE, config_text.clone())?;
    put(LOG_FILE, loss_log_csv(&trained.log))?;
    let mut pre = String::from("step,total,reconstruction\n");
    for r in &trained.pretrain_log {
        pre.push_str(&format!("{},{:e},{:e}\n", r.step, r.total, r.reconstruction));
    }
    put(PRETRAIN_LOG_FILE, pre)?;
    put(
        LABELS_FILE,
        result.labels.iter().map(|l| format!("{l}\n")).collect(),
    )?;
    if let Some(m) = &result.metrics {
        put(METRICS_FILE, m.to_json())?;
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    nets::save_checkpoint(&ckpt, &config_text, &trained.params)?;
    written.push(ckpt);
    let aff = dir.join(AFFINITY_FILE);
    data::write_csv_matrix(&aff, result.affinity.matrix())?;
    written.push(aff);
    Ok(written)
}

/// Rebuilds a trained model from a run directory's checkpoint.
pub fn load_run(dir: &Path, dataset: &MultiViewDataset) -> Result<TrainedModel> {
    let (config_text, params) = nets::load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let config = Config::from_text(&config_text)?;
    let model = build_model(dataset, &config)?;
    Ok(TrainedModel {
        model,
        params,
        config,
        pretrain_log: Vec::new(),
        log: Vec::new(),
    })
}

/// Trains and clusters one dataset; `k` comes from [`resolve_k`].
pub fn fit_and_cluster(dataset: &MultiViewDataset, cfg: &Config) -> Result<(TrainedModel, ClusterResult)> {
    let k = resolve_k(dataset, cfg)?;
    let trained = train(dataset, cfg)?;
    let result = cluster(&trained, dataset, k)?;
    Ok((trained, result))
}

/// The full model followed by each single-term drop.
pub const ABLATION_ROWS: [(&str, &[Ablation]); 5] = [
    ("full", &[]),
    ("drop_Ls", &[Ablation::DropLs]),
    ("drop_mkl", &[Ablation::DropMkl]),
    ("drop_cmi", &[Ablation::DropCmi]),
    ("drop_dis", &[Ablation::DropDis]),
];

/// Runs `cfg` on `make_dataset(seed)` with the config seed set to `seed`,
/// one labelled run per seed. Seeds fan out over `exec`; output is in seed
/// order.
pub fn seed_sweep<F>(make_dataset: F, cfg: &Config, seeds: &[u64], exec: Exec) -> Result<Vec<MetricsReport>>
where
    F: Fn(u64) -> Result<MultiViewDataset> + Sync,
{
    exec.map(seeds.len(), |i| {
        let ds = make_dataset(seeds[i])?;
        let cfg = Config {
            seed: seeds[i],
            ..cfg.clone()
        };
        let (_, r) = fit_and_cluster(&ds, &cfg)?;
        r.metrics
            .ok_or_else(|| Error::invalid("seed sweeps need labelled datasets"))
    })
    .into_iter()
    .collect()
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub per_seed: Vec<MetricsReport>,
}

impl AblationRow {
    pub fn acc(&self) -> (f64, f64) {
        mean_std(&self.per_seed.iter().map(|m| m.acc).collect::<Vec<_>>())
    }
    pub fn nmi(&self) -> (f64, f64) {
        mean_std(&self.per_seed.iter().map(|m| m.nmi).collect::<Vec<_>>())
    }
    pub fn ari(&self) -> (f64, f64) {
        mean_std(&self.per_seed.iter().map(|m| m.ari).collect::<Vec<_>>())
    }
}

/// Every row of [`ABLATION_ROWS`] over the same seeds. Flags already in
/// `cfg.ablate` are replaced by the row's flags.
pub fn run_ablation<F>(make_dataset: F, cfg: &Config, seeds: &[u64], exec: Exec) -> Result<Vec<AblationRow>>
where
    F: Fn(u64) -> Result<MultiViewDataset> + Sync,
{
    ABLATION_ROWS
        .iter()
        .map(|(name, flags)| {
            let cfg = Config {
                ablate: flags.to_vec(),
                ..cfg.clone()
            };
            Ok(AblationRow {
                name: name.to_string(),
                per_seed: seed_sweep(&make_dataset, &cfg, seeds, exec)?,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,seeds\n");
    for r in rows {
        let (a, sa) = r.acc();
        let (n, sn) = r.nmi();
        let (c, sc) = r.ari();
        out.push_str(&format!(
            "{},{a:.6},{sa:.6},{n:.6},{sn:.6},{c:.6},{sc:.6},{}\n",
            r.name,
            r.per_seed.len()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Nonlinearity, SynthSpec};
    use crate::nets::Architecture;

    fn tiny() -> (MultiViewDataset, Config) {
        let ds = generate_synthetic(&SynthSpec {
            n: 30,
            k: 3,
            subspace_dim: 2,
            latent_dim: 4,
            view_dims: vec![6, 5],
            noise_sigma: 0.05,
            nonlinearity: Nonlinearity::TanhAffine,
            seed: 2,
        })
        .unwrap();
        let cfg = Config {
            arch: Architecture {
                trunk_hidden: vec![8],
                feature_dim: 6,
                code_dim: 4,
                critic_hidden: 5,
                bounded_specific: true,
            },
            pretrain_steps: 5,
            train_steps: 4,
            ..Config::default()
        };
        (ds, cfg)
    }

    #[test]
    fn zero_pretrain_steps_keeps_init() {
        let (ds, mut cfg) = tiny();
        cfg.pretrain_steps = 0;
        let (params, log) = pretrain(&ds, &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(params, build_model(&ds, &cfg).unwrap().init_params(cfg.seed));
    }

    #[test]
    fn steps_keep_groups_separate_and_diag_zero() {
        let (ds, cfg) = tiny();
        let views = prepare_views(&ds, &cfg).unwrap();
        let model = build_model(&ds, &cfg).unwrap();
        let mut params = model.init_params(1);
        init_selfexpr(&model, &mut params, &views, &cfg).unwrap();
        let before = params.clone();
        let w = EffectiveWeights::new(&cfg.weights(2).unwrap(), &[]).unwrap();
        let draws = Draws::sample(&model, 30, 1, rng::streams::NOISE, 0).unwrap();
        let codes = CriticInputs::from_encoders(&model, &params, &views, &draws).unwrap();
        let (_, g) = losses::critic_value_and_grad(&model, &params, &codes, &draws, &w)
            .unwrap()
            .unwrap();
        assert!(g.names().all(|n| nets::is_critic(n)));
        Adam::new(&cfg).step(&mut params, &g, |_| 1e-2).unwrap();
        for (name, t) in params.iter() {
            if is_main(name) {
                assert_eq!(t, before.get(name).unwrap());
            }
        }
        let mut cfg1 = cfg.clone();
        cfg1.train_steps = 2;
        let mut p = before.clone();
        train_params(&model, &mut p, &views, &cfg1, |_, _| {}).unwrap();
        for v in 0..2 {
            let c = p.get(&nets::selfexpr_name(v)).unwrap();
            assert!(c.diag().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (ds, cfg) = tiny();
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn drop_and_zero_weight_trajectories_match() {
        let (ds, mut cfg) = tiny();
        cfg.ablate = vec![Ablation::DropCmi];
        let a = train(&ds, &cfg).unwrap();
        cfg.ablate.clear();
        cfg.lambda = vec![0.0];
        // lambda also scales the bottleneck term, so zero it on both sides.
        cfg.ablate = vec![Ablation::DropMkl];
        let b = train(&ds, &cfg).unwrap();
        let mut cfg2 = cfg.clone();
        cfg2.lambda = vec![0.01];
        cfg2.ablate = vec![Ablation::DropCmi, Ablation::DropMkl];
        let c = train(&ds, &cfg2).unwrap();
        assert_eq!(b.log, c.log);
        assert!(a.log.iter().all(|r| r.l_c_cmi == 0.0));
    }

    #[test]
    fn ceiling_and_k_checked() {
        let (ds, mut cfg) = tiny();
        cfg.batch_ceiling = 10;
        assert!(matches!(train(&ds, &cfg), Err(Error::Invalid(_))));
        cfg.batch_ceiling = 3000;
        let t = train(&ds, &cfg).unwrap();
        assert!(cluster(&t, &ds, 31).is_err());
        let r = cluster(&t, &ds, 3).unwrap();
        assert!(r.labels.iter().all(|&l| l < 3));
        assert!(r.metrics.is_some());
    }

    #[test]
    fn full_ablation_is_autoencoder_plus_selfexpr() {
        let (ds, mut cfg) = tiny();
        cfg.ablate = Ablation::ALL.to_vec();
        let t = train(&ds, &cfg).unwrap();
        for r in &t.log {
            assert_eq!((r.l_c_dis, r.l_c_cmi, r.l_c_mkl, r.l_s), (0.0, 0.0, 0.0, 0.0));
            assert!((r.total - (cfg.beta * r.l_r + cfg.gamma * r.l_se)).abs() < 1e-10);
        }
    }

    #[test]
    fn mean_std_of_one_seed_has_zero_spread() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ablation_table_shape() {
        let (ds, cfg) = tiny();
        let rows = run_ablation(|_| Ok(ds.clone()), &cfg, &[3], Exec::Sequential).unwrap();
        let csv = ablation_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0].split(',').count(), 8);
        for l in &lines[1..] {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!((f[2], f[4], f[6]), ("0.000000", "0.000000", "0.000000"));
        }
    }

    #[test]
    fn run_dir_round_trip() {
        let (ds, cfg) = tiny();
        let t = train(&ds, &cfg).unwrap();
        let r = cluster(&t, &ds, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_run_dir(dir.path(), &t, &r).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let back = load_run(dir.path(), &ds).unwrap();
        assert_eq!(back.params, t.params);
        assert_eq!(back.config, t.config);
        let r2 = cluster(&back, &ds, 3).unwrap();
        assert_eq!(r2.labels, r.labels);
    }
}
