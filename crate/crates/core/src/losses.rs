//! Assembles the training objective from the encoder, critic and
//! self-expression primitives.
//!
//! Components, for views `i != j`:
//!
//! * `l_c_dis = -sum_{(i,j)} JSD(anchor z_c^j, positive z_c^i)`
//! * `l_c_cmi = -sum_{(i,j)} lambda_i JSD(anchor z_c^j, positive h^i)`
//! * `l_c_mkl = sum_{(i,j)} lambda_i KL(p(z_c^i | v^i) || N(0, I))`
//! * `l_s = sum_i mean[-1/2 |z_c^i - F(z_s^i)|^2] + mean[-1/2 |z_s^i - F(z_c^i)|^2]`
//! * `l_r = sum_i mean |v^i - R(z_s^i, C_i^T z_c^i)|^2`
//! * `l_se = sum_i |Z_c^i - C_i^T Z_c^i|_F^2 + lambda_se |C_i|_F^2`
//!
//! and the minimized total is
//! `l_c_dis + l_c_cmi + l_c_mkl + alpha l_s + beta l_r + gamma l_se`.
//! `l_r` is the squared reconstruction error, the negated variational lower
//! bound on `I(v; z_s, z~_c)`; maximizing the bound is minimizing `+beta l_r`.
//!
//! A component whose effective weight is zero (zero weight or ablated) is
//! not evaluated and reports 0.

use std::collections::BTreeMap;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mi;
use crate::nets::{self, Bound, Direction, HeadId, Model, ParamStore, ViewLatents};
use crate::rng;
use crate::selfexpr;
use crate::tape::{Tape, Var};

/// Trade-off weights of the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Per-view bottleneck multiplier.
    pub lambda: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_se: f64,
}

impl LossWeights {
    pub fn shared(views: usize, lambda: f64, alpha: f64, beta: f64, gamma: f64, lambda_se: f64) -> Self {
        LossWeights {
            lambda: vec![lambda; views],
            alpha,
            beta,
            gamma,
            lambda_se,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .lambda
            .iter()
            .chain([&self.alpha, &self.beta, &self.gamma, &self.lambda_se]);
        for w in all {
            if !(*w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("loss weights must be finite and >= 0 (got {w})")));
            }
        }
        Ok(())
    }
}

/// One ablation switch per removable component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Ablation {
    #[serde(rename = "drop_Ls")]
    DropLs,
    #[serde(rename = "drop_mkl")]
    DropMkl,
    #[serde(rename = "drop_cmi")]
    DropCmi,
    #[serde(rename = "drop_dis")]
    DropDis,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::DropLs, Ablation::DropMkl, Ablation::DropCmi, Ablation::DropDis];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::DropLs => "drop_Ls",
            Ablation::DropMkl => "drop_mkl",
            Ablation::DropCmi => "drop_cmi",
            Ablation::DropDis => "drop_dis",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_Ls" | "drop_ls" => Ok(Ablation::DropLs),
            "drop_mkl" => Ok(Ablation::DropMkl),
            "drop_cmi" => Ok(Ablation::DropCmi),
            "drop_dis" => Ok(Ablation::DropDis),
            other => Err(Error::invalid(format!(
                "unknown ablation flag `{other}` (expected drop_Ls, drop_mkl, drop_cmi, drop_dis)"
            ))),
        }
    }
}

/// Parses a comma-separated flag list; empty input means no ablation.
pub fn parse_ablations(s: &str) -> Result<Vec<Ablation>> {
    let mut out: Vec<Ablation> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty() && *t != "none")
        .map(Ablation::from_str)
        .collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

/// Per-component multipliers after ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveWeights {
    pub dis: f64,
    /// Multiplies `JSD(z_c^j, h^i)` for positive view `i`.
    pub cmi: Vec<f64>,
    /// Multiplies `KL_i`.
    pub mkl: Vec<f64>,
    pub s: f64,
    pub r: f64,
    pub se: f64,
    pub lambda_se: f64,
}

impl EffectiveWeights {
    pub fn new(weights: &LossWeights, ablations: &[Ablation]) -> Result<Self> {
        weights.validate()?;
        let off = |a: Ablation| ablations.contains(&a);
        let zeroed = |on: bool, v: &Vec<f64>| if on { vec![0.0; v.len()] } else { v.clone() };
        Ok(EffectiveWeights {
            dis: if off(Ablation::DropDis) { 0.0 } else { 1.0 },
            cmi: zeroed(off(Ablation::DropCmi), &weights.lambda),
            mkl: zeroed(off(Ablation::DropMkl), &weights.lambda),
            s: if off(Ablation::DropLs) { 0.0 } else { weights.alpha },
            r: weights.beta,
            se: weights.gamma,
            lambda_se: weights.lambda_se,
        })
    }

    /// Whether the critic for `head` has anything to train.
    pub fn head_active(&self, head: HeadId) -> bool {
        match head {
            HeadId::Dis { .. } => self.dis > 0.0,
            HeadId::Cmi { positive, .. } => self.cmi[positive] > 0.0,
        }
    }
}

/// Named scalar terms, one row of the training log.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LossReport {
    pub l_c_dis: f64,
    pub l_c_cmi: f64,
    pub l_c_mkl: f64,
    pub l_s: f64,
    pub l_r: f64,
    pub l_se: f64,
    pub total: f64,
    pub per_view: Vec<ViewBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ViewBreakdown {
    pub kl: f64,
    pub l_s: f64,
    pub l_r: f64,
    pub l_se: f64,
}

impl LossReport {
    pub const KEYS: [&'static str; 7] = ["l_c_dis", "l_c_cmi", "l_c_mkl", "l_s", "l_r", "l_se", "total"];

    pub fn values(&self) -> [f64; 7] {
        [self.l_c_dis, self.l_c_cmi, self.l_c_mkl, self.l_s, self.l_r, self.l_se, self.total]
    }

    /// Weighted recombination of the stored components.
    pub fn recombine(&self, w: &EffectiveWeights) -> f64 {
        self.l_c_dis + self.l_c_cmi + self.l_c_mkl + w.s * self.l_s + w.r * self.l_r + w.se * self.l_se
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|x| x.is_finite())
    }
}

/// Per-step stochastic inputs: reparameterization noise per view and a
/// negative permutation per discriminator head.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub noise: Vec<Array2<f64>>,
    pub negatives: BTreeMap<HeadId, Vec<usize>>,
}

impl Draws {
    pub fn sample(model: &Model, n: usize, seed: u64, stream: u64, step: u64) -> Result<Self> {
        let d = model.arch.code_dim;
        let noise = (0..model.num_views())
            .map(|v| {
                let mut r = rng::stream_rng(seed, stream, step * 64 + v as u64);
                Array2::from_shape_simple_fn((n, d), || r.sample(StandardNormal))
            })
            .collect();
        let negatives = model
            .heads()
            .into_iter()
            .enumerate()
            .map(|(h, head)| {
                let s = rng::derive_seed(seed, rng::streams::NEGATIVES, step * 64 + h as u64);
                Ok((head, mi::negative_permutation(n, s)?))
            })
            .collect::<Result<_>>()?;
        Ok(Draws { noise, negatives })
    }

    /// All-zero noise: codes equal their posterior means.
    pub fn zero_noise(model: &Model, n: usize, seed: u64) -> Result<Self> {
        let mut d = Draws::sample(model, n, seed, rng::streams::NOISE, 0)?;
        for z in &mut d.noise {
            z.fill(0.0);
        }
        Ok(d)
    }

    fn negative(&self, head: HeadId) -> Result<&[usize]> {
        self.negatives
            .get(&head)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("no negatives drawn for {head:?}")))
    }
}

/// Which code paths of `l_s` carry encoder gradient in the main step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Targets are detached: the encoder only moves the predictor inputs.
    Detached,
    /// `z_c` is detached wherever it appears: only `z_s` is moved.
    Specific,
    /// Plain function of every parameter (used for gradient checks).
    Joint,
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detached" => Ok(TargetMode::Detached),
            "specific" => Ok(TargetMode::Specific),
            "joint" => Ok(TargetMode::Joint),
            other => Err(Error::invalid(format!(
                "specific_grad must be detached, specific or joint, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::Detached => "detached",
            TargetMode::Specific => "specific",
            TargetMode::Joint => "joint",
        })
    }
}

/// Tape handles of every evaluated component.
#[derive(Debug, Clone)]
pub struct Terms {
    pub dis: Option<Var>,
    pub cmi: Option<Var>,
    pub mkl: Option<Var>,
    pub s: Option<Var>,
    pub r: Option<Var>,
    pub se: Option<Var>,
    pub total: Var,
    view_kl: Vec<Option<Var>>,
    view_s: Vec<Option<Var>>,
    view_r: Vec<Option<Var>>,
    view_se: Vec<Option<Var>>,
}

/// Named component, for isolating one term's gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    CDis,
    CCmi,
    CMkl,
    S,
    R,
    Se,
    Total,
}

impl Terms {
    pub fn get(&self, term: Term) -> Option<Var> {
        match term {
            Term::CDis => self.dis,
            Term::CCmi => self.cmi,
            Term::CMkl => self.mkl,
            Term::S => self.s,
            Term::R => self.r,
            Term::Se => self.se,
            Term::Total => Some(self.total),
        }
    }

    pub fn report(&self, tape: &Tape) -> LossReport {
        let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
        LossReport {
            l_c_dis: val(self.dis),
            l_c_cmi: val(self.cmi),
            l_c_mkl: val(self.mkl),
            l_s: val(self.s),
            l_r: val(self.r),
            l_se: val(self.se),
            total: tape.scalar(self.total),
            per_view: (0..self.view_kl.len())
                .map(|i| ViewBreakdown {
                    kl: val(self.view_kl[i]),
                    l_s: val(self.view_s[i]),
                    l_r: val(self.view_r[i]),
                    l_se: val(self.view_se[i]),
                })
                .collect(),
        }
    }
}

fn sum_vars(tape: &mut Tape, vars: &[Var]) -> Option<Var> {
    let mut it = vars.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |acc, v| tape.add(acc, v)))
}

/// Encodes every view on the tape.
pub fn encode_all(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    views: &[Array2<f64>],
    draws: &Draws,
) -> Result<Vec<ViewLatents>> {
    if views.len() != model.num_views() || draws.noise.len() != model.num_views() {
        return Err(Error::shape(format!(
            "model has {} views, got {} inputs and {} noise blocks",
            model.num_views(),
            views.len(),
            draws.noise.len()
        )));
    }
    let n = views[0].nrows();
    views
        .iter()
        .zip(&draws.noise)
        .enumerate()
        .map(|(i, (v, noise))| {
            if v.nrows() != n {
                return Err(Error::shape("views are not row-aligned"));
            }
            let x = tape.leaf(v.clone());
            let e = tape.leaf(noise.clone());
            model.encode_on_tape(tape, bound, i, x, e)
        })
        .collect()
}

/// `l_c_dis`, `l_c_cmi`, `l_c_mkl` over every ordered view pair. Returns
/// per-view KL handles as well.
#[allow(clippy::type_complexity)]
pub fn view_common_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    lat: &[ViewLatents],
    draws: &Draws,
    w: &EffectiveWeights,
) -> Result<(Option<Var>, Option<Var>, Option<Var>, Vec<Option<Var>>)> {
    let m = lat.len();
    if m < 2 {
        return Err(Error::invalid("the view-common loss needs at least two views"));
    }
    let mut dis = Vec::new();
    let mut cmi = Vec::new();
    let mut mkl = Vec::new();
    let mut view_kl = vec![None; m];
    for i in 0..m {
        if w.mkl[i] > 0.0 {
            let kl = mi::kl_on_tape(tape, lat[i].mean, lat[i].log_var);
            view_kl[i] = Some(kl);
        }
        for j in 0..m {
            if i == j {
                continue;
            }
            if w.dis > 0.0 {
                let head = HeadId::Dis { anchor: j, positive: i };
                let jsd = mi::jsd_objective_on_tape(
                    tape,
                    model,
                    bound,
                    head,
                    lat[j].zc,
                    lat[i].zc,
                    draws.negative(head)?,
                )?;
                dis.push(tape.scale(jsd, -w.dis));
            }
            if w.cmi[i] > 0.0 {
                let head = HeadId::Cmi { anchor: j, positive: i };
                let jsd = mi::jsd_objective_on_tape(
                    tape,
                    model,
                    bound,
                    head,
                    lat[j].zc,
                    lat[i].h,
                    draws.negative(head)?,
                )?;
                cmi.push(tape.scale(jsd, -w.cmi[i]));
            }
            if let Some(kl) = view_kl[i] {
                mkl.push(tape.scale(kl, w.mkl[i]));
            }
        }
    }
    Ok((sum_vars(tape, &dis), sum_vars(tape, &cmi), sum_vars(tape, &mkl), view_kl))
}

/// Per-view predictability surrogate; sum over views.
pub fn view_specific_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    lat: &[ViewLatents],
    mode: TargetMode,
) -> Result<(Var, Vec<Var>)> {
    let mut per_view = Vec::with_capacity(lat.len());
    for (i, l) in lat.iter().enumerate() {
        // (z_c target, z_s target, z_c input)
        let (zc_target, zs_target, zc_input) = match mode {
            TargetMode::Detached => (tape.detach(l.zc), tape.detach(l.zs), l.zc),
            TargetMode::Specific => {
                let zc = tape.detach(l.zc);
                (zc, l.zs, zc)
            }
            TargetMode::Joint => (l.zc, l.zs, l.zc),
        };
        let pred_c = model.predictor_on_tape(tape, bound, Direction::SpecificToCommon(i), l.zs)?;
        let pred_s = model.predictor_on_tape(tape, bound, Direction::CommonToSpecific(i), zc_input)?;
        let rows = tape.shape(l.zc).0 as f64;
        let e1 = tape.sub(zc_target, pred_c);
        let e1 = tape.sum_squares(e1);
        let e2 = tape.sub(zs_target, pred_s);
        let e2 = tape.sum_squares(e2);
        let both = tape.add(e1, e2);
        per_view.push(tape.scale(both, -0.5 / rows));
    }
    let total = sum_vars(tape, &per_view).expect("at least one view");
    Ok((total, per_view))
}

/// `l_r` and `l_se` for every view; `c_raw[i]` is view `i`'s unmasked
/// coefficient parameter.
#[allow(clippy::type_complexity)]
pub fn self_expressive_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    views: &[Array2<f64>],
    lat: &[ViewLatents],
    w: &EffectiveWeights,
) -> Result<(Option<Var>, Option<Var>, Vec<Option<Var>>, Vec<Option<Var>>)> {
    let m = lat.len();
    let mut view_r = vec![None; m];
    let mut view_se = vec![None; m];
    if w.r == 0.0 && w.se == 0.0 {
        return Ok((None, None, view_r, view_se));
    }
    for i in 0..m {
        let c_raw = bound.var(&nets::selfexpr_name(i))?;
        let (se, zt) = selfexpr::selfexpr_loss_on_tape(tape, lat[i].zc, c_raw, w.lambda_se)?;
        if w.se > 0.0 {
            view_se[i] = Some(se);
        }
        if w.r > 0.0 {
            let rec = model.decode_on_tape(tape, bound, i, lat[i].zs, zt)?;
            let target = tape.leaf(views[i].clone());
            let diff = tape.sub(target, rec);
            let sq = tape.sum_squares(diff);
            view_r[i] = Some(tape.scale(sq, 1.0 / views[i].nrows() as f64));
        }
    }
    let r: Vec<Var> = view_r.iter().flatten().copied().collect();
    let se: Vec<Var> = view_se.iter().flatten().copied().collect();
    Ok((sum_vars(tape, &r), sum_vars(tape, &se), view_r, view_se))
}

/// Builds the full minimized objective on `tape`.
pub fn build_total(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    views: &[Array2<f64>],
    draws: &Draws,
    w: &EffectiveWeights,
    mode: TargetMode,
) -> Result<Terms> {
    let lat = encode_all(tape, model, bound, views, draws)?;
    let (dis, cmi, mkl, view_kl) = view_common_on_tape(tape, model, bound, &lat, draws, w)?;
    let (s, view_s) = if w.s > 0.0 {
        let (s, per) = view_specific_on_tape(tape, model, bound, &lat, mode)?;
        (Some(s), per.into_iter().map(Some).collect())
    } else {
        (None, vec![None; lat.len()])
    };
    let (r, se, view_r, view_se) = self_expressive_on_tape(tape, model, bound, views, &lat, w)?;

    let mut parts = Vec::new();
    parts.extend(dis);
    parts.extend(cmi);
    parts.extend(mkl);
    if let Some(s) = s {
        parts.push(tape.scale(s, w.s));
    }
    if let Some(r) = r {
        parts.push(tape.scale(r, w.r));
    }
    if let Some(se) = se {
        parts.push(tape.scale(se, w.se));
    }
    let total = match sum_vars(tape, &parts) {
        Some(t) => t,
        None => tape.constant_scalar(0.0),
    };
    Ok(Terms {
        dis,
        cmi,
        mkl,
        s,
        r,
        se,
        total,
        view_kl,
        view_s,
        view_r,
        view_se,
    })
}

/// Evaluates every component and the gradient of `term` for every
/// parameter tensor.
#[allow(clippy::too_many_arguments)]
pub fn term_value_and_grad(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    draws: &Draws,
    w: &EffectiveWeights,
    mode: TargetMode,
    term: Term,
) -> Result<(LossReport, f64, ParamStore)> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let terms = build_total(&mut tape, model, &bound, views, draws, w, mode)?;
    let report = terms.report(&tape);
    let Some(out) = terms.get(term) else {
        return Ok((report, 0.0, params.filter(|_| true).zero_like()));
    };
    let grads = tape.backward(out);
    Ok((report, tape.scalar(out), bound.gradients(&grads)))
}

trait ZeroLike {
    fn zero_like(self) -> Self;
}

impl ZeroLike for ParamStore {
    fn zero_like(mut self) -> Self {
        for (_, t) in self.iter_mut() {
            t.fill(0.0);
        }
        self
    }
}

/// Full objective report for one set of draws.
pub fn total_loss(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    weights: &LossWeights,
    ablations: &[Ablation],
    draws: &Draws,
) -> Result<LossReport> {
    let w = EffectiveWeights::new(weights, ablations)?;
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let terms = build_total(&mut tape, model, &bound, views, draws, &w, TargetMode::Joint)?;
    Ok(terms.report(&tape))
}

/// `(l_c_dis, l_c_cmi, l_c_mkl)` for a batch.
pub fn view_common_loss(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    weights: &LossWeights,
    draws: &Draws,
) -> Result<(f64, f64, f64)> {
    if views.len() < 2 {
        return Err(Error::invalid("the view-common loss needs at least two views"));
    }
    let w = EffectiveWeights::new(weights, &[])?;
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let lat = encode_all(&mut tape, model, &bound, views, draws)?;
    let (dis, cmi, mkl, _) = view_common_on_tape(&mut tape, model, &bound, &lat, draws, &w)?;
    let val = |v: Option<Var>| v.map_or(0.0, |v| tape.scalar(v));
    Ok((val(dis), val(cmi), val(mkl)))
}

pub fn view_specific_loss(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    draws: &Draws,
) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let lat = encode_all(&mut tape, model, &bound, views, draws)?;
    let (s, _) = view_specific_on_tape(&mut tape, model, &bound, &lat, TargetMode::Joint)?;
    Ok(tape.scalar(s))
}

pub fn reconstruction_loss(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    draws: &Draws,
) -> Result<f64> {
    let mut w = EffectiveWeights::new(&LossWeights::shared(views.len(), 0.0, 0.0, 1.0, 0.0, 0.0), &[])?;
    w.dis = 0.0;
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, params);
    let lat = encode_all(&mut tape, model, &bound, views, draws)?;
    let (r, _, _, _) = self_expressive_on_tape(&mut tape, model, &bound, views, &lat, &w)?;
    Ok(r.map_or(0.0, |r| tape.scalar(r)))
}

/// Critic objective to *minimize*: `-(sum of active JSD terms + l_s)`,
/// evaluated on fixed encoder outputs.
pub struct CriticInputs {
    pub h: Vec<Array2<f64>>,
    pub zc: Vec<Array2<f64>>,
    pub zs: Vec<Array2<f64>>,
}

impl CriticInputs {
    pub fn from_encoders(model: &Model, params: &ParamStore, views: &[Array2<f64>], draws: &Draws) -> Result<Self> {
        let mut out = CriticInputs {
            h: Vec::new(),
            zc: Vec::new(),
            zs: Vec::new(),
        };
        for (i, v) in views.iter().enumerate() {
            let code = model.encode(params, i, v, &draws.noise[i])?;
            out.h.push(code.h);
            out.zc.push(code.zc);
            out.zs.push(code.zs);
        }
        Ok(out)
    }
}

pub fn critic_value_and_grad(
    model: &Model,
    params: &ParamStore,
    inputs: &CriticInputs,
    draws: &Draws,
    w: &EffectiveWeights,
) -> Result<Option<(f64, ParamStore)>> {
    let critics = params.filter(nets::is_critic);
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, &critics);
    let m = model.num_views();
    let h: Vec<Var> = inputs.h.iter().map(|x| tape.leaf(x.clone())).collect();
    let zc: Vec<Var> = inputs.zc.iter().map(|x| tape.leaf(x.clone())).collect();
    let zs: Vec<Var> = inputs.zs.iter().map(|x| tape.leaf(x.clone())).collect();
    let mut gains = Vec::new();
    for head in model.heads() {
        if !w.head_active(head) {
            continue;
        }
        let (HeadId::Dis { anchor, positive } | HeadId::Cmi { anchor, positive }) = head;
        let positive_var = match head {
            HeadId::Dis { .. } => zc[positive],
            HeadId::Cmi { .. } => h[positive],
        };
        let jsd = mi::jsd_objective_on_tape(
            &mut tape,
            model,
            &bound,
            head,
            zc[anchor],
            positive_var,
            draws.negative(head)?,
        )?;
        gains.push(jsd);
    }
    if w.s > 0.0 {
        let lat: Vec<ViewLatents> = (0..m)
            .map(|i| ViewLatents {
                h: h[i],
                mean: zc[i],
                log_var: zc[i],
                zc: zc[i],
                zs: zs[i],
            })
            .collect();
        let (s, _) = view_specific_on_tape(&mut tape, model, &bound, &lat, TargetMode::Joint)?;
        gains.push(s);
    }
    let Some(gain) = sum_vars(&mut tape, &gains) else {
        return Ok(None);
    };
    let objective = tape.scale(gain, -1.0);
    let grads = tape.backward(objective);
    Ok(Some((tape.scalar(objective), bound.gradients(&grads))))
}

/// Pretraining objective: `sum_i mean |v^i - R(z_s^i, z_c^i)|^2 + lambda_i KL_i`.
pub fn pretrain_value_and_grad(
    model: &Model,
    params: &ParamStore,
    views: &[Array2<f64>],
    draws: &Draws,
    w: &EffectiveWeights,
) -> Result<(f64, f64, ParamStore)> {
    let trainable = params.filter(|n| n.starts_with("enc.") || n.starts_with("dec."));
    let mut tape = Tape::new();
    let bound = Bound::bind(&mut tape, &trainable);
    let lat = encode_all(&mut tape, model, &bound, views, draws)?;
    let mut rec_terms = Vec::new();
    let mut parts = Vec::new();
    for (i, l) in lat.iter().enumerate() {
        let rec = model.decode_on_tape(&mut tape, &bound, i, l.zs, l.zc)?;
        let target = tape.leaf(views[i].clone());
        let diff = tape.sub(target, rec);
        let sq = tape.sum_squares(diff);
        let r = tape.scale(sq, 1.0 / views[i].nrows() as f64);
        rec_terms.push(r);
        parts.push(r);
        if w.mkl[i] > 0.0 {
            let kl = mi::kl_on_tape(&mut tape, l.mean, l.log_var);
            parts.push(tape.scale(kl, w.mkl[i]));
        }
    }
    let rec_total = sum_vars(&mut tape, &rec_terms).expect("at least one view");
    let total = sum_vars(&mut tape, &parts).expect("at least one view");
    let grads = tape.backward(total);
    Ok((tape.scalar(total), tape.scalar(rec_total), bound.gradients(&grads)))
}
