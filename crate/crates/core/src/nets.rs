//! Parameterized components: per-view encoders with a shared trunk feature
//! `h` and two heads (stochastic common code, deterministic specific code),
//! per-view decoders, pair discriminators and cross-code predictors.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names. Every forward
//! pass binds the store onto a [`Tape`] so losses can be differentiated with
//! respect to any named tensor.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::tape::{Gradients, Tape, Var};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

/// Layer sizes shared by every view.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub trunk_hidden: Vec<usize>,
    /// Width of the pre-split feature `h`.
    pub feature_dim: usize,
    /// Width of both `z_c` and `z_s`.
    pub code_dim: usize,
    pub critic_hidden: usize,
    /// Squash `z_s` through `tanh`, keeping the predictability game bounded.
    pub bounded_specific: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            trunk_hidden: vec![128, 128],
            feature_dim: 64,
            code_dim: 16,
            critic_hidden: 64,
            bounded_specific: true,
        }
    }
}

impl Architecture {
    /// Decoder hidden widths: the encoder trunk mirrored.
    pub fn decoder_hidden(&self) -> Vec<usize> {
        let mut h = vec![self.feature_dim];
        h.extend(self.trunk_hidden.iter().rev());
        h
    }
}

/// Diagonal Gaussian posterior parameters for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCode {
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
}

impl GaussianCode {
    pub fn new(mean: Array2<f64>, log_var: Array2<f64>) -> Result<Self> {
        if mean.dim() != log_var.dim() {
            return Err(Error::shape(format!(
                "mean {:?} vs log_var {:?}",
                mean.dim(),
                log_var.dim()
            )));
        }
        let log_var = log_var.mapv(|x| x.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Ok(GaussianCode { mean, log_var })
    }

    /// Reparameterized draw `mean + exp(log_var / 2) * noise`.
    pub fn sample(&self, noise: &Array2<f64>) -> Array2<f64> {
        &self.mean + &(self.log_var.mapv(|lv| (0.5 * lv).exp()) * noise)
    }
}

/// Selects one JSD discriminator. `anchor` and `positive` are view indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadId {
    /// Scores `(z_c^anchor, z_c^positive)` pairs.
    Dis { anchor: usize, positive: usize },
    /// Scores `(z_c^anchor, h^positive)` pairs.
    Cmi { anchor: usize, positive: usize },
}

impl HeadId {
    pub fn prefix(&self) -> String {
        match self {
            HeadId::Dis { anchor, positive } => format!("disc.dis.{anchor}_{positive}"),
            HeadId::Cmi { anchor, positive } => format!("disc.cmi.{anchor}_{positive}"),
        }
    }
}

/// Predictor direction for the view-specific disentanglement term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Predicts `z_c^v` from `z_s^v`.
    SpecificToCommon(usize),
    /// Predicts `z_s^v` from `z_c^v`.
    CommonToSpecific(usize),
}

impl Direction {
    pub fn prefix(&self) -> String {
        match self {
            Direction::SpecificToCommon(v) => format!("pred.s2c.{v}"),
            Direction::CommonToSpecific(v) => format!("pred.c2s.{v}"),
        }
    }
}

pub fn encoder_prefix(view: usize) -> String {
    format!("enc.{view}")
}

pub fn decoder_prefix(view: usize) -> String {
    format!("dec.{view}")
}

pub fn selfexpr_name(view: usize) -> String {
    format!("selfexpr.{view}")
}

/// Discriminators and predictors; updated only in critic steps.
pub fn is_critic(name: &str) -> bool {
    name.starts_with("disc.") || name.starts_with("pred.")
}

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Tensors whose name satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites the matching tensors with those of `other`.
    pub fn update_from(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.tensors {
            *self.get_mut(k)? = v.clone();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// A [`ParamStore`] loaded onto a tape as leaves.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn bind(tape: &mut Tape, params: &ParamStore) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), tape.leaf(v.clone())))
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Gradients for every bound tensor, keyed like the store.
    pub fn gradients(&self, grads: &Gradients) -> ParamStore {
        ParamStore {
            tensors: self
                .vars
                .iter()
                .map(|(k, &v)| (k.clone(), grads.get(v)))
                .collect(),
        }
    }
}

fn linear(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{prefix}.w"))?;
    let b = bound.var(&format!("{prefix}.b"))?;
    let (_, cols) = tape.shape(x);
    let (rows, _) = tape.shape(w);
    if cols != rows {
        return Err(Error::shape(format!(
            "`{prefix}` expects {rows} input columns, got {cols}"
        )));
    }
    let y = tape.matmul(x, w);
    Ok(tape.add_row(y, b))
}

/// Stack of `layers` linear maps `{prefix}.l{i}`, ELU between them and, when
/// `final_act`, after the last.
fn mlp(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    layers: usize,
    x: Var,
    final_act: bool,
) -> Result<Var> {
    let mut y = x;
    for l in 0..layers {
        y = linear(tape, bound, &format!("{prefix}.l{l}"), y)?;
        if l + 1 < layers || final_act {
            y = tape.elu(y);
        }
    }
    Ok(y)
}

fn init_linear(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
) {
    let std = (1.0 / fan_in as f64).sqrt();
    let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    });
    store.insert(format!("{prefix}.w"), w);
    store.insert(format!("{prefix}.b"), Array2::zeros((1, fan_out)));
}

fn init_mlp(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    widths: &[usize],
) {
    for (l, pair) in widths.windows(2).enumerate() {
        init_linear(store, rng, &format!("{prefix}.l{l}"), pair[0], pair[1]);
    }
}

/// Network factory fixing the layer layout for a given set of views.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub view_dims: Vec<usize>,
}

/// Tape handles for one view's encoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct ViewLatents {
    pub h: Var,
    pub mean: Var,
    pub log_var: Var,
    pub zc: Var,
    pub zs: Var,
}

/// Encoder outputs for one view as plain arrays.
#[derive(Debug, Clone)]
pub struct ViewCode {
    pub h: Array2<f64>,
    pub code: GaussianCode,
    pub zc: Array2<f64>,
    pub zs: Array2<f64>,
}

impl Model {
    pub fn new(arch: Architecture, view_dims: Vec<usize>) -> Result<Self> {
        if view_dims.is_empty() || view_dims.contains(&0) {
            return Err(Error::invalid("every view needs a positive dimension"));
        }
        if arch.code_dim == 0 || arch.feature_dim == 0 || arch.critic_hidden == 0 {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(Model { arch, view_dims })
    }

    pub fn num_views(&self) -> usize {
        self.view_dims.len()
    }

    fn trunk_widths(&self, view: usize) -> Vec<usize> {
        let mut w = vec![self.view_dims[view]];
        w.extend(&self.arch.trunk_hidden);
        w.push(self.arch.feature_dim);
        w
    }

    fn decoder_widths(&self, view: usize) -> Vec<usize> {
        let mut w = vec![2 * self.arch.code_dim];
        w.extend(self.arch.decoder_hidden());
        w.push(self.view_dims[view]);
        w
    }

    fn head_input_dim(&self, head: HeadId) -> usize {
        match head {
            HeadId::Dis { .. } => 2 * self.arch.code_dim,
            HeadId::Cmi { .. } => self.arch.code_dim + self.arch.feature_dim,
        }
    }

    /// Every discriminator head: one per ordered view pair and term.
    pub fn heads(&self) -> Vec<HeadId> {
        let m = self.num_views();
        let mut heads = Vec::new();
        for anchor in 0..m {
            for positive in 0..m {
                if anchor != positive {
                    heads.push(HeadId::Dis { anchor, positive });
                    heads.push(HeadId::Cmi { anchor, positive });
                }
            }
        }
        heads
    }

    pub fn directions(&self) -> Vec<Direction> {
        (0..self.num_views())
            .flat_map(|v| [Direction::SpecificToCommon(v), Direction::CommonToSpecific(v)])
            .collect()
    }

    fn check_view(&self, view: usize) -> Result<()> {
        if view >= self.num_views() {
            return Err(Error::invalid(format!(
                "view index {view} out of range (model has {} views)",
                self.num_views()
            )));
        }
        Ok(())
    }

    fn check_head(&self, head: HeadId) -> Result<()> {
        let (HeadId::Dis { anchor, positive } | HeadId::Cmi { anchor, positive }) = head;
        if anchor == positive || anchor >= self.num_views() || positive >= self.num_views() {
            return Err(Error::invalid(format!("unknown discriminator head {head:?}")));
        }
        Ok(())
    }

    fn check_direction(&self, dir: Direction) -> Result<()> {
        let (Direction::SpecificToCommon(v) | Direction::CommonToSpecific(v)) = dir;
        if v >= self.num_views() {
            return Err(Error::invalid(format!("unknown predictor direction {dir:?}")));
        }
        Ok(())
    }

    /// Fresh parameters for encoders, decoders and every critic.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = rng::stream_rng(seed, rng::streams::INIT, 0);
        let mut store = ParamStore::new();
        let a = &self.arch;
        for v in 0..self.num_views() {
            let enc = encoder_prefix(v);
            init_mlp(&mut store, &mut rng, &format!("{enc}.trunk"), &self.trunk_widths(v));
            init_linear(&mut store, &mut rng, &format!("{enc}.mu"), a.feature_dim, a.code_dim);
            init_linear(&mut store, &mut rng, &format!("{enc}.logvar"), a.feature_dim, a.code_dim);
            init_linear(&mut store, &mut rng, &format!("{enc}.zs"), a.feature_dim, a.code_dim);
            init_mlp(&mut store, &mut rng, &decoder_prefix(v), &self.decoder_widths(v));
        }
        for head in self.heads() {
            let widths = [self.head_input_dim(head), a.critic_hidden, 1];
            init_mlp(&mut store, &mut rng, &head.prefix(), &widths);
        }
        for dir in self.directions() {
            let widths = [a.code_dim, a.critic_hidden, a.code_dim];
            init_mlp(&mut store, &mut rng, &dir.prefix(), &widths);
        }
        store
    }

    /// Encoder forward on a tape. `noise` is `batch x code_dim` standard
    /// normal draws supplied by the caller.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        view: usize,
        x: Var,
        noise: Var,
    ) -> Result<ViewLatents> {
        self.check_view(view)?;
        let (rows, cols) = tape.shape(x);
        if cols != self.view_dims[view] {
            return Err(Error::shape(format!(
                "view {view} expects {} columns, got {cols}",
                self.view_dims[view]
            )));
        }
        if tape.shape(noise) != (rows, self.arch.code_dim) {
            return Err(Error::shape(format!(
                "noise must be {rows} x {}, got {:?}",
                self.arch.code_dim,
                tape.shape(noise)
            )));
        }
        let enc = encoder_prefix(view);
        let layers = self.trunk_widths(view).len() - 1;
        let h = mlp(tape, bound, &format!("{enc}.trunk"), layers, x, true)?;
        let mean = linear(tape, bound, &format!("{enc}.mu"), h)?;
        let raw_lv = linear(tape, bound, &format!("{enc}.logvar"), h)?;
        let log_var = tape.clamp(raw_lv, LOG_VAR_MIN, LOG_VAR_MAX);
        let half = tape.scale(log_var, 0.5);
        let std = tape.exp(half);
        let spread = tape.mul(std, noise);
        let zc = tape.add(mean, spread);
        let zs = linear(tape, bound, &format!("{enc}.zs"), h)?;
        let zs = if self.arch.bounded_specific { tape.tanh(zs) } else { zs };
        Ok(ViewLatents {
            h,
            mean,
            log_var,
            zc,
            zs,
        })
    }

    /// Encoder forward returning plain arrays.
    pub fn encode(
        &self,
        params: &ParamStore,
        view: usize,
        x: &Array2<f64>,
        noise: &Array2<f64>,
    ) -> Result<ViewCode> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &params.filter(|n| n.starts_with("enc.")));
        let xv = tape.leaf(x.clone());
        let nv = tape.leaf(noise.clone());
        let lat = self.encode_on_tape(&mut tape, &bound, view, xv, nv)?;
        Ok(ViewCode {
            h: tape.value(lat.h).clone(),
            code: GaussianCode {
                mean: tape.value(lat.mean).clone(),
                log_var: tape.value(lat.log_var).clone(),
            },
            zc: tape.value(lat.zc).clone(),
            zs: tape.value(lat.zs).clone(),
        })
    }

    /// Decoder forward on `[zs, zc_tilde]`.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        view: usize,
        zs: Var,
        zc_tilde: Var,
    ) -> Result<Var> {
        self.check_view(view)?;
        let d = self.arch.code_dim;
        if tape.shape(zs).1 != d || tape.shape(zc_tilde).1 != d {
            return Err(Error::shape(format!("decoder inputs must have {d} columns")));
        }
        if tape.shape(zs).0 != tape.shape(zc_tilde).0 {
            return Err(Error::shape("decoder inputs have different batch sizes"));
        }
        let joined = tape.concat_cols(zs, zc_tilde);
        let layers = self.decoder_widths(view).len() - 1;
        mlp(tape, bound, &decoder_prefix(view), layers, joined, false)
    }

    pub fn decode(
        &self,
        params: &ParamStore,
        view: usize,
        zs: &Array2<f64>,
        zc_tilde: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bound = Bound::bind(&mut tape, &params.filter(|n| n.starts_with("dec.")));
        let a = tape.leaf(zs.clone());
        let b = tape.leaf(zc_tilde.clone());
        let out = self.decode_on_tape(&mut tape, &bound, view, a, b)?;
        Ok(tape.value(out).clone())
    }

    /// One logit per row pair `(a_r, b_r)`.
    pub fn discriminator_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        head: HeadId,
        a: Var,
        b: Var,
    ) -> Result<Var> {
        self.check_head(head)?;
        if tape.shape(a).0 != tape.shape(b).0 {
            return Err(Error::shape("discriminator inputs are not row-aligned"));
        }
        let joined = tape.concat_cols(a, b);
        mlp(tape, bound, &head.prefix(), 2, joined, false)
    }

    pub fn discriminator_score(
        &self,
        params: &ParamStore,
        head: HeadId,
        a: &Array2<f64>,
        b: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_head(head)?;
        let mut tape = Tape::new();
        let prefix = head.prefix();
        let bound = Bound::bind(&mut tape, &params.filter(|n| n.starts_with(&prefix)));
        let av = tape.leaf(a.clone());
        let bv = tape.leaf(b.clone());
        let out = self.discriminator_on_tape(&mut tape, &bound, head, av, bv)?;
        Ok(tape.value(out).clone())
    }

    pub fn predictor_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        dir: Direction,
        z: Var,
    ) -> Result<Var> {
        self.check_direction(dir)?;
        if tape.shape(z).1 != self.arch.code_dim {
            return Err(Error::shape(format!(
                "predictor expects {} columns",
                self.arch.code_dim
            )));
        }
        mlp(tape, bound, &dir.prefix(), 2, z, false)
    }

    pub fn predictor_forward(
        &self,
        params: &ParamStore,
        dir: Direction,
        z: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_direction(dir)?;
        let mut tape = Tape::new();
        let prefix = dir.prefix();
        let bound = Bound::bind(&mut tape, &params.filter(|n| n.starts_with(&prefix)));
        let zv = tape.leaf(z.clone());
        let out = self.predictor_on_tape(&mut tape, &bound, dir, zv)?;
        Ok(tape.value(out).clone())
    }
}

/// Per-row Gaussian log-density `-1/2 |target - prediction|^2`, constant dropped.
pub fn unit_gaussian_log_density(target: &Array2<f64>, prediction: &Array2<f64>) -> Vec<f64> {
    target
        .rows()
        .into_iter()
        .zip(prediction.rows())
        .map(|(t, p)| -0.5 * t.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .collect()
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares analytic gradients to central finite differences on a random
/// subset of at least `min_coords` coordinates (all of them when fewer
/// exist). Relative error is `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`.
///
/// `loss_fn` returns the loss and its gradient for every tensor it reads.
pub fn grad_check<F>(
    loss_fn: F,
    params: &ParamStore,
    epsilon: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamStore)>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be > 0 (got {epsilon})")));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss under grad_check".into()));
    }

    let index: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    let mut rng = rng::stream_rng(seed, rng::streams::GRAD_CHECK, 0);
    let picks: Vec<usize> = if index.len() <= min_coords {
        (0..index.len()).collect()
    } else {
        let mut p = sample(&mut rng, index.len(), min_coords).into_vec();
        p.sort_unstable();
        p
    };

    let mut worst = None;
    let mut max_rel = 0.0f64;
    let mut probe = params.clone();
    for &p in &picks {
        let (name, flat) = &index[p];
        let ncols = params.get(name)?.ncols();
        let (r, c) = (flat / ncols, flat % ncols);
        let g_a = match analytic.get(name) {
            Ok(g) => g[[r, c]],
            Err(_) => 0.0,
        };
        let orig = params.get(name)?[[r, c]];
        probe.get_mut(name)?[[r, c]] = orig + epsilon;
        let (plus, _) = loss_fn(&probe)?;
        probe.get_mut(name)?[[r, c]] = orig - epsilon;
        let (minus, _) = loss_fn(&probe)?;
        probe.get_mut(name)?[[r, c]] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss perturbed at {name}[{flat}]")));
        }
        let g_n = (plus - minus) / (2.0 * epsilon);
        let rel = (g_a - g_n).abs() / (g_a.abs() + g_n.abs()).max(1e-8);
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((name.clone(), *flat));
        }
    }
    Ok(GradCheck {
        max_rel_error: max_rel,
        worst,
        coords_checked: picks.len(),
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MVSCCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a checkpoint: magic, version, config echo, then every tensor as
/// `name`, shape and row-major little-endian `f64` values.
pub fn save_checkpoint(path: &Path, config_echo: &str, params: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(config_echo.len() as u64).to_le_bytes());
    buf.extend_from_slice(config_echo.as_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
        for x in t.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                context: "checkpoint".into(),
                message: "truncated file".into(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Parse {
            context: "checkpoint".into(),
            message: e.to_string(),
        })
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(String, ParamStore)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: "not a checkpoint".into(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let cfg_len = r.u64()? as usize;
    let config = r.string(cfg_len)?;
    let count = r.u64()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(Error::Parse {
                context: name,
                message: format!("expected 2 dimensions, found {ndim}"),
            });
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::shape(e.to_string()))?;
        store.insert(name, t);
    }
    Ok((config, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_model() -> Model {
        Model::new(
            Architecture {
                trunk_hidden: vec![7],
                feature_dim: 5,
                code_dim: 3,
                critic_hidden: 4,
                bounded_specific: true,
            },
            vec![6, 4],
        )
        .unwrap()
    }

    fn input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::seeded(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
    }

    #[test]
    fn zero_noise_gives_posterior_mean() {
        let m = small_model();
        let p = m.init_params(1);
        let x = input(8, 6, 2);
        let code = m.encode(&p, 0, &x, &Array2::zeros((8, 3))).unwrap();
        assert_eq!(code.zc, code.code.mean);
        assert_eq!(code.zc.nrows(), 8);
        assert_eq!(code.h.dim(), (8, 5));
        assert_eq!(code.zs.dim(), (8, 3));
    }

    #[test]
    fn identical_rows_give_identical_codes() {
        let m = small_model();
        let p = m.init_params(1);
        let mut x = input(4, 6, 3);
        let r0 = x.row(0).to_owned();
        x.row_mut(2).assign(&r0);
        let code = m.encode(&p, 0, &x, &Array2::zeros((4, 3))).unwrap();
        assert_eq!(code.h.row(0), code.h.row(2));
        assert_eq!(code.code.mean.row(0), code.code.mean.row(2));
        assert_eq!(code.code.log_var.row(0), code.code.log_var.row(2));
        assert_eq!(code.zs.row(0), code.zs.row(2));
    }

    #[test]
    fn encoder_rejects_wrong_width() {
        let m = small_model();
        let p = m.init_params(1);
        let err = m.encode(&p, 1, &input(3, 6, 0), &Array2::zeros((3, 3)));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn reparameterized_samples_match_moments() {
        let code = GaussianCode::new(array![[0.7, -1.2]], array![[0.4, -1.0]]).unwrap();
        let draws = 200_000;
        let mut rng = rng::seeded(11);
        let (mut s, mut s2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..draws {
            let noise = Array2::from_shape_simple_fn((1, 2), || rng.sample(StandardNormal));
            let z = code.sample(&noise);
            for j in 0..2 {
                s[j] += z[[0, j]];
                s2[j] += z[[0, j]] * z[[0, j]];
            }
        }
        for j in 0..2 {
            let mean = s[j] / draws as f64;
            let var = s2[j] / draws as f64 - mean * mean;
            let target_var = code.log_var[[0, j]].exp();
            // Five standard errors.
            assert!((mean - code.mean[[0, j]]).abs() < 5.0 * (target_var / draws as f64).sqrt());
            assert!((var - target_var).abs() < 5.0 * target_var * (2.0 / draws as f64).sqrt());
        }
    }

    #[test]
    fn log_var_is_clamped() {
        let code = GaussianCode::new(array![[0.0, 0.0]], array![[-50.0, 50.0]]).unwrap();
        assert_eq!(code.log_var, array![[LOG_VAR_MIN, LOG_VAR_MAX]]);
    }

    #[test]
    fn decoder_shapes_and_bias_only_output() {
        let m = small_model();
        let mut p = m.init_params(1);
        let zs = input(5, 3, 4);
        let zc = input(5, 3, 5);
        assert_eq!(m.decode(&p, 1, &zs, &zc).unwrap().dim(), (5, 4));

        // Zero the last layer's weights: the output is its bias broadcast.
        let last = format!("{}.l{}", decoder_prefix(1), m.decoder_widths(1).len() - 2);
        p.get_mut(&format!("{last}.w")).unwrap().fill(0.0);
        *p.get_mut(&format!("{last}.b")).unwrap() = array![[1.0, -2.0, 0.5, 3.0]];
        let out = m.decode(&p, 1, &zs, &zc).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![1.0, -2.0, 0.5, 3.0]);
        }
    }

    #[test]
    fn zero_discriminator_scores_zero() {
        let m = small_model();
        let mut p = m.init_params(1);
        let head = HeadId::Dis { anchor: 1, positive: 0 };
        for (name, t) in p.iter_mut() {
            if name.starts_with(&head.prefix()) {
                t.fill(0.0);
            }
        }
        let logits = m
            .discriminator_score(&p, head, &input(6, 3, 1), &input(6, 3, 2))
            .unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
        let prob = 1.0 / (1.0 + (-logits[[0, 0]]).exp());
        assert_eq!(prob, 0.5);
    }

    #[test]
    fn discriminator_is_row_wise_and_heads_are_isolated() {
        let m = small_model();
        let p = m.init_params(3);
        let a = input(6, 3, 1);
        let b = input(6, 5, 2);
        let head = HeadId::Cmi { anchor: 0, positive: 1 };
        let out = m.discriminator_score(&p, head, &a, &b).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let pa = a.select(ndarray::Axis(0), &perm);
        let pb = b.select(ndarray::Axis(0), &perm);
        let pout = m.discriminator_score(&p, head, &pa, &pb).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            assert!((pout[[r, 0]] - out[[src, 0]]).abs() < 1e-14);
        }
        let other = HeadId::Cmi { anchor: 1, positive: 0 };
        let b_other = input(6, 5, 9);
        let a_other = input(6, 3, 8);
        let before = m.discriminator_score(&p, other, &a_other, &b_other).unwrap();
        let mut p2 = p.clone();
        for (name, t) in p2.iter_mut() {
            if name.starts_with(&head.prefix()) {
                t.mapv_inplace(|x| x * 3.0 + 1.0);
            }
        }
        assert_ne!(m.discriminator_score(&p2, head, &a, &b).unwrap(), out);
        assert_eq!(m.discriminator_score(&p2, other, &a_other, &b_other).unwrap(), before);
    }

    #[test]
    fn unknown_head_and_direction_rejected() {
        let m = small_model();
        let p = m.init_params(1);
        let a = input(2, 3, 1);
        assert!(m
            .discriminator_score(&p, HeadId::Dis { anchor: 0, positive: 0 }, &a, &a)
            .is_err());
        assert!(m
            .discriminator_score(&p, HeadId::Dis { anchor: 0, positive: 7 }, &a, &a)
            .is_err());
        assert!(m
            .predictor_forward(&p, Direction::CommonToSpecific(2), &a)
            .is_err());
    }

    #[test]
    fn zero_predictor_returns_bias() {
        let m = small_model();
        let mut p = m.init_params(1);
        let dir = Direction::SpecificToCommon(0);
        p.get_mut(&format!("{}.l1.w", dir.prefix())).unwrap().fill(0.0);
        *p.get_mut(&format!("{}.l1.b", dir.prefix())).unwrap() = array![[0.1, 0.2, 0.3]];
        let out = m.predictor_forward(&p, dir, &input(4, 3, 2)).unwrap();
        assert_eq!(out.dim(), (4, 3));
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.1, 0.2, 0.3]);
        }
        let ld = unit_gaussian_log_density(&out, &out);
        assert!(ld.iter().all(|&x| x == 0.0));
        let off = unit_gaussian_log_density(&(&out + 1.0), &out);
        assert!(off.iter().all(|&x| x < 0.0));
    }

    #[test]
    fn grad_check_on_quadratic_is_exact() {
        let m = small_model();
        let p = m.init_params(4);
        let quad = |ps: &ParamStore| -> Result<(f64, ParamStore)> {
            let mut g = ParamStore::new();
            let mut total = 0.0;
            for (k, t) in ps.iter() {
                total += 0.5 * t.iter().map(|x| x * x).sum::<f64>();
                g.insert(k.clone(), t.clone());
            }
            Ok((total, g))
        };
        let report = grad_check(quad, &p, 1e-4, 150, 0).unwrap();
        assert_eq!(report.coords_checked, 150);
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    #[test]
    fn grad_check_rejects_zero_epsilon_and_nan() {
        let p = small_model().init_params(0);
        let f = |_: &ParamStore| Ok((0.0, ParamStore::new()));
        assert!(grad_check(f, &p, 0.0, 10, 0).is_err());
        let nan = |_: &ParamStore| Ok((f64::NAN, ParamStore::new()));
        assert!(matches!(grad_check(nan, &p, 1e-5, 10, 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = small_model().init_params(8);
        save_checkpoint(&path, "seed = 8\n", &p).unwrap();
        let (cfg, back) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, "seed = 8\n");
        assert_eq!(back, p);
    }
}
