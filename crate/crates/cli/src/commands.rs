use std::path::{Path, PathBuf};

use ndarray::Array2;

use mvsc_core::config::Config;
use mvsc_core::data::{self, MultiViewDataset, Nonlinearity, SynthSpec};
use mvsc_core::exec::Exec;
use mvsc_core::{losses, metrics, selfexpr, trainer};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;
use crate::verify::{self, Fault};
use crate::viz;

/// Config sources shared by `train` and `ablate`, applied in order: file
/// (or defaults), `--set` overrides, then the dedicated flags.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub file: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub ablate: Option<String>,
    pub seed: Option<u64>,
}

impl ConfigSource {
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.file {
            Some(p) => Config::from_file(p)?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(a) = &self.ablate {
            cfg.ablate = losses::parse_ablations(a)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

fn load(dir: &Path) -> Result<MultiViewDataset> {
    Ok(data::load_dataset(dir)?)
}

pub struct SynthArgs {
    pub n: usize,
    pub k: usize,
    pub views: Vec<usize>,
    pub subspace_dim: usize,
    pub latent_dim: usize,
    pub noise: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

pub fn synth(args: &SynthArgs, out: &Path) -> Result<()> {
    let spec = SynthSpec {
        n: args.n,
        k: args.k,
        subspace_dim: args.subspace_dim,
        latent_dim: args.latent_dim,
        view_dims: args.views.clone(),
        noise_sigma: args.noise,
        nonlinearity: args.nonlinearity,
        seed: args.seed,
    };
    // Flag errors surface before anything is written.
    spec.validate()?;
    let ds = data::generate_synthetic(&spec)?;
    data::save_dataset(&ds, out)?;
    let mut m = RunManifest::new("synth");
    m.seeds = vec![args.seed];
    m.notes.push(format!(
        "n={} k={} views={:?} subspace_dim={} latent_dim={} noise={} nonlinearity={:?}",
        spec.n, spec.k, spec.view_dims, spec.subspace_dim, spec.latent_dim, spec.noise_sigma, spec.nonlinearity
    ));
    m.finalize(out)?;
    println!("dataset written to {}", out.display());
    Ok(())
}

pub fn train(dataset_dir: &Path, cfg: &Config, out: &Path) -> Result<()> {
    let ds = load(dataset_dir)?;
    let k = trainer::resolve_k(&ds, cfg)?;
    let total = cfg.train_steps;
    let trained = trainer::train_with(&ds, cfg, |step, r| {
        if (step + 1) % 100 == 0 || step + 1 == total {
            eprintln!("step {:>5}/{total} total {:.5e}", step + 1, r.total);
        }
    })?;
    let result = trainer::cluster(&trained, &ds, k)?;
    create_dir(out)?;
    trainer::write_run_dir(out, &trained, &result)?;
    let mut m = RunManifest::new("train");
    m.config = Some(cfg.to_text());
    m.seeds = vec![cfg.seed];
    m.dataset = Some(dataset_dir.display().to_string());
    m.finalize(out)?;
    match &result.metrics {
        Some(r) => println!("acc={:.4} nmi={:.4} ari={:.4}", r.acc, r.nmi, r.ari),
        None => println!("dataset has no labels; wrote {} cluster labels", result.labels.len()),
    }
    println!("run written to {}", out.display());
    Ok(())
}

/// The dataset a run was trained on: the explicit flag, else the path
/// recorded in the run manifest.
fn run_dataset(run: &Path, explicit: Option<&Path>) -> Result<(PathBuf, MultiViewDataset)> {
    let dir = match explicit {
        Some(d) => d.to_path_buf(),
        None => RunManifest::load(run)?
            .dataset
            .map(PathBuf::from)
            .ok_or_else(|| CliError::usage("run manifest records no dataset; pass --data"))?,
    };
    let ds = load(&dir)?;
    Ok((dir, ds))
}

pub fn eval(run: &Path, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let (dir, ds) = run_dataset(run, dataset)?;
    let trained = trainer::load_run(run, &ds)?;
    let k = trainer::resolve_k(&ds, &trained.config)?;
    let result = trainer::cluster(&trained, &ds, k)?;
    create_dir(out)?;
    data::write_labels(&out.join(trainer::LABELS_FILE), &result.labels)?;
    let m = result
        .metrics
        .ok_or_else(|| CliError::usage(format!("dataset {} has no labels to evaluate against", dir.display())))?;
    write(&out.join(trainer::METRICS_FILE), m.to_json())?;
    let mut manifest = RunManifest::new("eval");
    manifest.config = Some(trained.config.to_text());
    manifest.seeds = vec![trained.config.seed];
    manifest.dataset = Some(dir.display().to_string());
    manifest.finalize(out)?;
    println!("acc={:.4} nmi={:.4} ari={:.4}", m.acc, m.nmi, m.ari);
    Ok(())
}

/// Where `ablate` gets one dataset per seed.
pub enum AblationData {
    Dir(PathBuf),
    /// Regenerates the default benchmark with each seed.
    SynthDefault,
}

pub fn ablate(source: &AblationData, cfg: &Config, seeds: &[u64], jobs: usize, out: &Path) -> Result<()> {
    if seeds.is_empty() {
        return Err(CliError::usage("--seeds needs at least one seed"));
    }
    let exec = Exec::from_threads(jobs);
    let rows = match source {
        AblationData::Dir(d) => {
            let ds = load(d)?;
            trainer::run_ablation(|_| Ok(ds.clone()), cfg, seeds, exec)?
        }
        AblationData::SynthDefault => trainer::run_ablation(
            |s| data::generate_synthetic(&SynthSpec::default_benchmark(s)),
            cfg,
            seeds,
            exec,
        )?,
    };
    create_dir(out)?;
    let table = trainer::ablation_csv(&rows);
    write(&out.join("ablation.csv"), &table)?;
    let mut per_seed = String::from("row,seed,acc,nmi,ari\n");
    for r in &rows {
        for (s, m) in seeds.iter().zip(&r.per_seed) {
            per_seed.push_str(&format!("{},{s},{:.6},{:.6},{:.6}\n", r.name, m.acc, m.nmi, m.ari));
        }
    }
    write(&out.join("ablation_per_seed.csv"), per_seed)?;
    let mut m = RunManifest::new("ablate");
    m.config = Some(cfg.to_text());
    m.seeds = seeds.to_vec();
    m.dataset = match source {
        AblationData::Dir(d) => Some(d.display().to_string()),
        AblationData::SynthDefault => None,
    };
    if matches!(source, AblationData::SynthDefault) {
        m.notes.push("dataset regenerated per seed from the default benchmark".into());
    }
    m.finalize(out)?;
    for r in &rows {
        let (a, sa) = r.acc();
        let (n, sn) = r.nmi();
        let (c, sc) = r.ari();
        println!(
            "{:<9} acc {a:.4}+-{sa:.4} nmi {n:.4}+-{sn:.4} ari {c:.4}+-{sc:.4}",
            r.name
        );
    }
    Ok(())
}

pub fn verify(fault: Option<Fault>, out: &Path) -> Result<()> {
    let checks = verify::run_checks(fault)?;
    let text = verify::report(&checks);
    create_dir(out)?;
    write(&out.join("verify_report.txt"), &text)?;
    let mut m = RunManifest::new("verify");
    if let Some(f) = fault {
        m.notes.push(format!("fault injected: {f:?}"));
    }
    m.finalize(out)?;
    print!("{text}");
    let failed = verify::failed(&checks);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Oracle(failed.join(", ")))
    }
}

pub struct VizArgs {
    pub view_i: usize,
    pub view_j: usize,
    pub sample: usize,
}

fn matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    Ok(data::write_csv_matrix(path, m)?)
}

pub fn viz(run: &Path, dataset: Option<&Path>, args: &VizArgs, out: &Path) -> Result<()> {
    let (dir, ds) = run_dataset(run, dataset)?;
    let views = ds.num_views();
    if args.view_i >= views || args.view_j >= views || args.view_i == args.view_j {
        return Err(CliError::usage(format!(
            "--view-i and --view-j must be distinct views below {views}"
        )));
    }
    let trained = trainer::load_run(run, &ds)?;
    create_dir(out)?;
    let labels = ds.labels.as_deref();
    let order = viz::label_order(labels, ds.n());
    write(
        &out.join("sample_order.csv"),
        order.iter().map(|i| format!("{i}\n")).collect::<String>(),
    )?;

    let c = trained.selfexpr_matrices()?;
    let mut heatmaps = vec![("affinity_fused".to_string(), selfexpr::fuse_affinities(&c)?)];
    for (v, cv) in c.iter().enumerate() {
        heatmaps.push((format!("affinity_view{v}"), selfexpr::fuse_affinities(std::slice::from_ref(cv))?));
    }
    for (name, w) in &heatmaps {
        let ordered = viz::reorder(w.matrix(), &order);
        matrix_csv(&out.join(format!("{name}.csv")), &ordered)?;
        viz::affinity_png(&ordered, &out.join(format!("{name}.png")))?;
    }

    let codes = trained.codes(&ds)?;
    for (v, (zc, _)) in codes.iter().enumerate() {
        let p = viz::principal_2d(zc)?;
        let mut csv = String::from("sample,pc1,pc2,label\n");
        for (i, row) in p.rows().into_iter().enumerate() {
            let l = labels.map_or(String::new(), |l| l[i].to_string());
            csv.push_str(&format!("{i},{:e},{:e},{l}\n", row[0], row[1]));
        }
        write(&out.join(format!("zc_scatter_view{v}.csv")), csv)?;
        viz::scatter_png(&p, labels, &out.join(format!("zc_scatter_view{v}.png")))?;
    }

    let subset = viz::spread_subset(&order, args.sample);
    let pick = |m: &Array2<f64>| m.select(ndarray::Axis(0), &subset);
    let (zc_i, zs_i) = &codes[args.view_i];
    let (zc_j, zs_j) = &codes[args.view_j];
    let blocks = [pick(zc_i), pick(zs_i), pick(zc_j), pick(zs_j)];
    let cos = metrics::block_cosine_matrix(&blocks.iter().collect::<Vec<_>>())?;
    matrix_csv(&out.join("cosine_blocks.csv"), &cos)?;
    viz::diverging_png(&cos, &out.join("cosine_blocks.png"))?;
    let common = metrics::matched_abs_cosine(zc_i, zc_j)?;
    let cross = metrics::matched_abs_cosine(zc_i, zs_i)?;
    let (i, j) = (args.view_i, args.view_j);
    write(
        &out.join("cosine_summary.txt"),
        format!(
            "blocks=zc{i},zs{i},zc{j},zs{j}\nsample={}\nmean_abs_cos_zc{i}_zc{j}={common:e}\nmean_abs_cos_zc{i}_zs{i}={cross:e}\ngap={:e}\n",
            subset.len(),
            common - cross
        ),
    )?;

    let mut m = RunManifest::new("viz");
    m.config = Some(trained.config.to_text());
    m.seeds = vec![trained.config.seed];
    m.dataset = Some(dir.display().to_string());
    m.notes.push("scatter uses a top-2 principal-component projection in place of t-SNE".into());
    m.notes.push("heatmap rows and columns are ordered by true label when labels exist".into());
    m.finalize(out)?;
    println!(
        "mean |cos| zc{i}-zc{j} {common:.4}, zc{i}-zs{i} {cross:.4}; plots in {}",
        out.display()
    );
    Ok(())
}
