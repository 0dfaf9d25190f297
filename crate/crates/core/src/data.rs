//! Multi-view datasets: the in-memory model, a synthetic union-of-subspaces
//! generator, the on-disk directory format and per-view normalization.
//!
//! On disk a dataset is a directory holding `manifest.json`, one headerless
//! CSV per view (`n` rows, `d_i` columns) and an optional labels file with
//! one integer per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    None,
    TanhAffine,
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Nonlinearity::None),
            "tanh-affine" => Ok(Nonlinearity::TanhAffine),
            other => Err(Error::invalid(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub k: usize,
    pub subspace_dim: usize,
    pub latent_dim: usize,
    pub view_dims: Vec<usize>,
    pub noise_sigma: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl SynthSpec {
    /// The default desk-scale benchmark: 500 points, 5 clusters, two
    /// 30-dimensional tanh-affine views with noise 0.1.
    pub fn default_benchmark(seed: u64) -> Self {
        SynthSpec {
            n: 500,
            k: 5,
            subspace_dim: 3,
            latent_dim: 16,
            view_dims: vec![30, 30],
            noise_sigma: 0.1,
            nonlinearity: Nonlinearity::TanhAffine,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("k >= 2 violated (k = {})", self.k)));
        }
        if self.n < self.k {
            return Err(Error::invalid(format!(
                "n >= k violated (n = {}, k = {})",
                self.n, self.k
            )));
        }
        if self.subspace_dim == 0 {
            return Err(Error::invalid("subspace_dim >= 1 violated"));
        }
        if self.subspace_dim > self.latent_dim {
            return Err(Error::invalid(format!(
                "subspace_dim <= latent_dim violated ({} > {})",
                self.subspace_dim, self.latent_dim
            )));
        }
        if self.view_dims.len() < 2 {
            return Err(Error::invalid(format!(
                "at least 2 views required (got {})",
                self.view_dims.len()
            )));
        }
        let min_dim = *self.view_dims.iter().min().unwrap();
        if self.latent_dim > min_dim {
            return Err(Error::invalid(format!(
                "latent_dim <= min(view_dims) violated ({} > {})",
                self.latent_dim, min_dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub name: String,
    pub file: String,
    pub dim: usize,
}

/// Provenance record stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SynthSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
    pub names: Vec<String>,
    pub manifest: Manifest,
}

impl MultiViewDataset {
    /// Builds a dataset and checks its invariants. The manifest is derived
    /// from the views; `generator`/`seed` provenance is attached afterwards.
    pub fn new(
        views: Vec<Array2<f64>>,
        labels: Option<Vec<usize>>,
        names: Vec<String>,
    ) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::invalid(format!(
                "a multi-view dataset needs at least 2 views (got {})",
                views.len()
            )));
        }
        if names.len() != views.len() {
            return Err(Error::invalid("one name per view required"));
        }
        let n = views[0].nrows();
        if n == 0 {
            return Err(Error::invalid("dataset has no samples"));
        }
        for (name, v) in names.iter().zip(&views) {
            if v.nrows() != n {
                return Err(Error::RowMismatch {
                    view: name.clone(),
                    expected: n,
                    found: v.nrows(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("view `{name}`")));
            }
        }
        if let Some(labels) = &labels {
            validate_labels(labels, n)?;
        }
        let manifest = Manifest {
            n,
            views: names
                .iter()
                .zip(&views)
                .map(|(name, v)| ViewEntry {
                    name: name.clone(),
                    file: format!("{name}.csv"),
                    dim: v.ncols(),
                })
                .collect(),
            labels_file: labels.as_ref().map(|_| "labels.txt".to_string()),
            seed: None,
            generator: None,
        };
        Ok(MultiViewDataset {
            views,
            labels,
            names,
            manifest,
        })
    }

    pub fn n(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.ncols()).collect()
    }

    /// Number of classes when labels are present.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Reorders samples: row `r` of the result is row `order[r]` of `self`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let views = self.views.iter().map(|v| v.select(Axis(0), order)).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&i| l[i]).collect());
        let mut ds = MultiViewDataset::new(views, labels, self.names.clone())?;
        ds.manifest.seed = self.manifest.seed;
        ds.manifest.generator = self.manifest.generator.clone();
        Ok(ds)
    }
}

fn validate_labels(labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::shape(format!(
            "labels have length {}, expected {n}",
            labels.len()
        )));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; k];
    for &l in labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "class {missing} never appears in labels (classes must be 0..{k})"
        )));
    }
    Ok(())
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Orthonormal `dim x rank` basis from the QR factor of a Gaussian matrix.
fn orthonormal_basis(rng: &mut impl Rng, dim: usize, rank: usize) -> Array2<f64> {
    let g = gaussian_matrix(rng, dim, rank, 1.0);
    let m = DMatrix::from_fn(dim, rank, |r, c| g[[r, c]]);
    let q = m.qr().q();
    Array2::from_shape_fn((dim, rank), |(r, c)| q[(r, c)])
}

/// Cluster sizes `floor(n/k)`, the first `n mod k` clusters one larger.
pub fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k)
        .flat_map(|c| std::iter::repeat_n(c, base + usize::from(c < extra)))
        .collect()
}

/// Draws a union-of-subspaces dataset observed under several views.
///
/// Each cluster owns a random `subspace_dim`-dimensional linear subspace of a
/// shared latent space. A latent point is pushed through a distinct map per
/// view: linear when `nonlinearity` is `none`, otherwise
/// affine -> tanh -> affine. Gaussian noise of std `noise_sigma` is added.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<MultiViewDataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);

    let bases: Vec<Array2<f64>> = (0..spec.k)
        .map(|_| orthonormal_basis(&mut rng, spec.latent_dim, spec.subspace_dim))
        .collect();
    let labels = balanced_labels(spec.n, spec.k);

    let mut latent = Array2::zeros((spec.n, spec.latent_dim));
    for (mut row, &c) in latent.rows_mut().into_iter().zip(&labels) {
        let coeff = gaussian_matrix(&mut rng, spec.subspace_dim, 1, 1.0);
        let point = bases[c].dot(&coeff);
        row.assign(&point.column(0));
    }

    let input_std = 1.0 / (spec.subspace_dim as f64).sqrt();
    let mut views = Vec::with_capacity(spec.view_dims.len());
    for &d in &spec.view_dims {
        let first = gaussian_matrix(&mut rng, spec.latent_dim, d, input_std);
        let mut v = latent.dot(&first);
        if spec.nonlinearity == Nonlinearity::TanhAffine {
            let b1 = gaussian_matrix(&mut rng, 1, d, 0.5);
            v += &b1;
            v.mapv_inplace(f64::tanh);
            let second = gaussian_matrix(&mut rng, d, d, 1.0 / (d as f64).sqrt());
            let b2 = gaussian_matrix(&mut rng, 1, d, 0.5);
            v = v.dot(&second) + &b2;
        }
        if spec.noise_sigma > 0.0 {
            v += &gaussian_matrix(&mut rng, spec.n, d, spec.noise_sigma);
        }
        views.push(v);
    }

    let names = (0..views.len()).map(|i| format!("view{i}")).collect();
    let mut ds = MultiViewDataset::new(views, Some(labels), names)?;
    ds.manifest.seed = Some(spec.seed);
    ds.manifest.generator = Some(spec.clone());
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Zscore,
    Minmax,
    None,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(NormMode::Zscore),
            "minmax" => Ok(NormMode::Minmax),
            "none" => Ok(NormMode::None),
            other => Err(Error::invalid(format!("unknown normalization `{other}`"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormMode::Zscore => "zscore",
            NormMode::Minmax => "minmax",
            NormMode::None => "none",
        })
    }
}

const CONSTANT_COLUMN_TOL: f64 = 1e-12;

fn normalize_matrix(v: &Array2<f64>, mode: NormMode) -> Array2<f64> {
    let mut out = v.clone();
    match mode {
        NormMode::None => {}
        NormMode::Zscore => {
            for mut col in out.columns_mut() {
                let n = col.len() as f64;
                let mean = col.sum() / n;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let std = var.sqrt();
                if std <= CONSTANT_COLUMN_TOL {
                    col.fill(0.0);
                } else {
                    col.mapv_inplace(|x| (x - mean) / std);
                }
            }
        }
        NormMode::Minmax => {
            for mut col in out.columns_mut() {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi - lo <= CONSTANT_COLUMN_TOL {
                    col.fill(0.0);
                } else {
                    col.mapv_inplace(|x| (x - lo) / (hi - lo));
                }
            }
        }
    }
    out
}

/// Per-view, per-feature normalization. Constant columns become zero.
pub fn normalize_views(ds: &MultiViewDataset, mode: NormMode) -> MultiViewDataset {
    let mut out = ds.clone();
    for v in &mut out.views {
        *v = normalize_matrix(v, mode);
    }
    out
}

fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for row in m.rows() {
        let mut first = true;
        for x in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            // `Display` for f64 prints the shortest string that round-trips.
            write!(w, "{x}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_matrix(path, m)
}

pub fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                context: format!("{}:{}", path.display(), lineno + 1),
                message: format!("`{field}` is not a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{}:{}",
                    path.display(),
                    lineno + 1
                )));
            }
            data.push(x);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Parse {
                    context: format!("{}:{}", path.display(), lineno + 1),
                    message: format!("expected {c} columns, found {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::shape(e.to_string()))
}

pub fn save_dataset(ds: &MultiViewDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (entry, view) in ds.manifest.views.iter().zip(&ds.views) {
        write_matrix(&dir.join(&entry.file), view)?;
    }
    if let (Some(labels), Some(file)) = (&ds.labels, &ds.manifest.labels_file) {
        write_labels(&dir.join(file), labels)?;
    }
    let json = serde_json::to_string_pretty(&ds.manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                context: format!("{}:{}", path.display(), i + 1),
                message: format!("`{}` is not a label", l.trim()),
            })
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<MultiViewDataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let m = read_csv_matrix(&dir.join(&entry.file))?;
        if m.nrows() != manifest.n {
            return Err(Error::RowMismatch {
                view: entry.name.clone(),
                expected: manifest.n,
                found: m.nrows(),
            });
        }
        if m.ncols() != entry.dim {
            return Err(Error::shape(format!(
                "view `{}` has {} columns, manifest says {}",
                entry.name,
                m.ncols(),
                entry.dim
            )));
        }
        views.push(m);
    }
    let labels = match &manifest.labels_file {
        Some(file) => Some(read_labels(&dir.join(file))?),
        None => None,
    };
    let names = manifest.views.iter().map(|v| v.name.clone()).collect();
    let mut ds = MultiViewDataset::new(views, labels, names)?;
    ds.manifest = manifest;
    Ok(ds)
}
