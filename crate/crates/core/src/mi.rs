//! Mutual-information objectives and exact discrete MI.
//!
//! The trainable side is the Jensen-Shannon discriminator objective and the
//! closed-form KL between a diagonal Gaussian posterior and the standard
//! normal prior. The exact side sums MI and conditional MI over discrete
//! joint tables; all quantities are in nats.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nets::{Bound, GaussianCode, HeadId, Model, ParamStore};
use crate::rng;
use crate::tape::{Tape, Var};

/// Probability floor inside every logarithm of the JSD objective.
pub const LOG_FLOOR: f64 = 1e-12;

/// `2 ln(1/2)`: the JSD objective of a discriminator that always says 1/2.
pub const JSD_CHANCE: f64 = -1.386_294_361_119_890_6;

const DERANGEMENT_ATTEMPTS: usize = 10;

/// Row permutation used to form negatives: a derangement when one turns up
/// within ten draws, otherwise the first non-identity draw.
pub fn negative_permutation(rows: usize, seed: u64) -> Result<Vec<usize>> {
    if rows < 2 {
        return Err(Error::invalid(format!(
            "negative sampling needs at least 2 rows (got {rows})"
        )));
    }
    let mut rng = rng::stream_rng(seed, rng::streams::NEGATIVES, rows as u64);
    let mut perm: Vec<usize> = (0..rows).collect();
    for _ in 0..DERANGEMENT_ATTEMPTS {
        perm.shuffle(&mut rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
    loop {
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            return Ok(perm);
        }
        perm.shuffle(&mut rng);
    }
}

/// `batch` with rows permuted by [`negative_permutation`].
pub fn negative_sampling(batch: &Array2<f64>, seed: u64) -> Result<Array2<f64>> {
    let perm = negative_permutation(batch.nrows(), seed)?;
    Ok(batch.select(ndarray::Axis(0), &perm))
}

/// `mean log s(D(a, p)) + mean log(1 - s(D(a, n)))` on a tape, where the
/// negatives are `positive` rows gathered through `negative_perm`.
pub fn jsd_objective_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    head: HeadId,
    anchor: Var,
    positive: Var,
    negative_perm: &[usize],
) -> Result<Var> {
    if tape.shape(anchor).0 != tape.shape(positive).0 {
        return Err(Error::shape("anchor and positive are not row-aligned"));
    }
    if negative_perm.len() != tape.shape(positive).0 {
        return Err(Error::shape("negative permutation length differs from batch"));
    }
    let negative = tape.gather_rows(positive, negative_perm);
    jsd_with_negatives_on_tape(tape, model, bound, head, anchor, positive, negative)
}

pub fn jsd_with_negatives_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &Bound,
    head: HeadId,
    anchor: Var,
    positive: Var,
    negative: Var,
) -> Result<Var> {
    if tape.shape(negative) != tape.shape(positive) {
        return Err(Error::shape("negative and positive shapes differ"));
    }
    let pos_logit = model.discriminator_on_tape(tape, bound, head, anchor, positive)?;
    let neg_logit = model.discriminator_on_tape(tape, bound, head, anchor, negative)?;
    let pos_term = tape.log_sigmoid(pos_logit, LOG_FLOOR);
    // log(1 - s(x)) = log s(-x)
    let flipped = tape.scale(neg_logit, -1.0);
    let neg_term = tape.log_sigmoid(flipped, LOG_FLOOR);
    let pos_mean = tape.mean(pos_term);
    let neg_mean = tape.mean(neg_term);
    Ok(tape.add(pos_mean, neg_mean))
}

/// JSD objective for plain arrays with explicit negatives.
pub fn jsd_mi_objective(
    model: &Model,
    params: &ParamStore,
    head: HeadId,
    anchor: &Array2<f64>,
    positive: &Array2<f64>,
    negative: &Array2<f64>,
) -> Result<f64> {
    if anchor.nrows() != positive.nrows() {
        return Err(Error::shape("anchor and positive are not row-aligned"));
    }
    let mut tape = Tape::new();
    let prefix = head.prefix();
    let bound = Bound::bind(&mut tape, &params.filter(|n| n.starts_with(&prefix)));
    let a = tape.leaf(anchor.clone());
    let p = tape.leaf(positive.clone());
    let n = tape.leaf(negative.clone());
    let obj = jsd_with_negatives_on_tape(&mut tape, model, &bound, head, a, p, n)?;
    Ok(tape.scalar(obj))
}

/// Batch-mean `1/2 sum_j (mu^2 + exp(lv) - lv - 1)` on a tape.
pub fn kl_on_tape(tape: &mut Tape, mean: Var, log_var: Var) -> Var {
    let rows = tape.shape(mean).0 as f64;
    let mu2 = tape.square(mean);
    let var = tape.exp(log_var);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, log_var);
    let c = tape.add_scalar(b, -1.0);
    let total = tape.sum(c);
    tape.scale(total, 0.5 / rows)
}

/// Closed-form `KL(N(mean, diag exp(log_var)) || N(0, I))`, averaged over rows.
pub fn kl_to_standard_normal(code: &GaussianCode) -> Result<f64> {
    if code.mean.dim() != code.log_var.dim() {
        return Err(Error::shape("mean and log_var shapes differ"));
    }
    if code.mean.iter().chain(code.log_var.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Gaussian code".into()));
    }
    let rows = code.mean.nrows().max(1) as f64;
    let total: f64 = code
        .mean
        .iter()
        .zip(code.log_var.iter())
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum();
    Ok(0.5 * total / rows)
}

/// Probability table over two or three discrete variables, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    table: Vec<f64>,
    dims: Vec<usize>,
}

const NORMALIZATION_TOL: f64 = 1e-12;

impl DiscreteJoint {
    pub fn new(table: Vec<f64>, dims: Vec<usize>) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return Err(Error::invalid("joint must span 2 or 3 variables"));
        }
        if dims.contains(&0) || dims.iter().product::<usize>() != table.len() {
            return Err(Error::shape(format!(
                "table of {} entries does not match cardinalities {dims:?}",
                table.len()
            )));
        }
        if table.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("joint has negative or non-finite entries"));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!("joint sums to {total}, not 1")));
        }
        Ok(DiscreteJoint { table, dims })
    }

    /// Normalizes a nonnegative weight table first.
    pub fn from_weights(weights: Vec<f64>, dims: Vec<usize>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must have positive mass"));
        }
        DiscreteJoint::new(weights.into_iter().map(|w| w / total).collect(), dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn prob(&self, index: &[usize]) -> f64 {
        self.table[self.flat(index)]
    }

    fn flat(&self, index: &[usize]) -> usize {
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dims.len()];
        for (slot, &d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
        idx
    }

    fn check_axes(&self, groups: &[&[usize]]) -> Result<()> {
        let mut seen = vec![false; self.dims.len()];
        for g in groups {
            if g.is_empty() {
                return Err(Error::invalid("empty variable group"));
            }
            for &a in *g {
                if a >= self.dims.len() {
                    return Err(Error::invalid(format!("axis {a} out of range")));
                }
                if seen[a] {
                    return Err(Error::invalid(format!("axis {a} used twice")));
                }
                seen[a] = true;
            }
        }
        Ok(())
    }

    /// Marginal over `axes` as a dense table indexed in the order given.
    fn marginal(&self, axes: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let mut out = vec![0.0; dims.iter().product()];
        for (flat, &p) in self.table.iter().enumerate() {
            let idx = self.unflat(flat);
            let m = axes.iter().fold(0, |acc, &a| acc * self.dims[a] + idx[a]);
            out[m] += p;
        }
        (dims, out)
    }

    fn marginal_index(&self, idx: &[usize], axes: &[usize]) -> usize {
        axes.iter().fold(0, |acc, &a| acc * self.dims[a] + idx[a])
    }
}

/// `I(A; B)` where `a`, `b` are disjoint groups of axes.
pub fn discrete_mi(joint: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    joint.check_axes(&[a, b])?;
    let ab: Vec<usize> = a.iter().chain(b).copied().collect();
    let (_, pab) = joint.marginal(&ab);
    let (_, pa) = joint.marginal(a);
    let (_, pb) = joint.marginal(b);
    let mut total = 0.0;
    let mut seen = vec![false; pab.len()];
    for flat in 0..joint.table.len() {
        let idx = joint.unflat(flat);
        let iab = joint.marginal_index(&idx, &ab);
        if seen[iab] {
            continue;
        }
        seen[iab] = true;
        let p = pab[iab];
        if p > 0.0 {
            let q = pa[joint.marginal_index(&idx, a)] * pb[joint.marginal_index(&idx, b)];
            total += p * (p / q).ln();
        }
    }
    Ok(total)
}

/// `I(A; B | C)` summed directly over the joint.
pub fn discrete_cmi(joint: &DiscreteJoint, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
    joint.check_axes(&[a, b, c])?;
    let ac: Vec<usize> = a.iter().chain(c).copied().collect();
    let bc: Vec<usize> = b.iter().chain(c).copied().collect();
    let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
    let (_, pabc) = joint.marginal(&abc);
    let (_, pac) = joint.marginal(&ac);
    let (_, pbc) = joint.marginal(&bc);
    let (_, pc) = joint.marginal(c);
    let mut total = 0.0;
    let mut seen = vec![false; pabc.len()];
    for flat in 0..joint.table.len() {
        let idx = joint.unflat(flat);
        let i = joint.marginal_index(&idx, &abc);
        if seen[i] {
            continue;
        }
        seen[i] = true;
        let p = pabc[i];
        if p > 0.0 {
            let num = pc[joint.marginal_index(&idx, c)] * p;
            let den = pac[joint.marginal_index(&idx, &ac)] * pbc[joint.marginal_index(&idx, &bc)];
            total += p * (num / den).ln();
        }
    }
    Ok(total)
}

/// Entropy of a group of axes.
pub fn discrete_entropy(joint: &DiscreteJoint, a: &[usize]) -> Result<f64> {
    joint.check_axes(&[a])?;
    let (_, p) = joint.marginal(a);
    Ok(p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum())
}

/// Residuals of the three information identities on a joint over axes
/// `(v, z_i, z_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionResiduals {
    /// `I(v;z_i) - [I(v;z_i|z_j) + I(z_i;z_j)]`; zero when `z_i` and `z_j`
    /// are conditionally independent given `v`.
    pub split: f64,
    /// `I(v;z_i,z_j) - [I(v;z_j) + I(v;z_i|z_j)]`; zero for every joint.
    pub chain: f64,
    /// `I(v;z_i|z_j) - [I(v;z_i) - I(v;z_j)]`; zero when `z_j` is a
    /// function of `z_i`.
    pub reduction: f64,
}

pub fn verify_decomposition(joint: &DiscreteJoint) -> Result<DecompositionResiduals> {
    if joint.dims().len() != 3 {
        return Err(Error::invalid("decomposition needs a joint over (v, z_i, z_j)"));
    }
    let (v, zi, zj) = (&[0usize][..], &[1usize][..], &[2usize][..]);
    let i_v_zi = discrete_mi(joint, v, zi)?;
    let i_v_zj = discrete_mi(joint, v, zj)?;
    let i_zi_zj = discrete_mi(joint, zi, zj)?;
    let i_v_zi_given_zj = discrete_cmi(joint, v, zi, zj)?;
    let i_v_both = discrete_mi(joint, v, &[1, 2])?;
    Ok(DecompositionResiduals {
        split: i_v_zi - (i_v_zi_given_zj + i_zi_zj),
        chain: i_v_both - (i_v_zj + i_v_zi_given_zj),
        reduction: i_v_zi_given_zj - (i_v_zi - i_v_zj),
    })
}
