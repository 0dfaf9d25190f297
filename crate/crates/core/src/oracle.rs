//! Brute-force reference computations used by the verification suites.
//!
//! Nothing here shares code with the trained estimators: the discrete
//! constructions feed [`crate::mi::verify_decomposition`], the tabular
//! discriminator gives the exact optimum of the JSD objective on a grid, and
//! the Monte-Carlo KL estimate checks the closed form.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mi::{self, DecompositionResiduals, DiscreteJoint};
use crate::nets::GaussianCode;
use crate::rng;

fn random_weights(rng: &mut impl Rng, len: usize, sparsity: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random::<f64>() < sparsity {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    w
}

fn card(rng: &mut impl Rng) -> usize {
    rng.random_range(2..=4)
}

/// Joint over `(v, z_i, z_j)` where both codes are deterministic functions
/// of `v`.
pub fn deterministic_encoder_joint(seed: u64) -> Result<DiscreteJoint> {
    let mut rng = rng::seeded(seed);
    let (nv, ni, nj) = (card(&mut rng), card(&mut rng), card(&mut rng));
    let pv = random_weights(&mut rng, nv, 0.0);
    let fi: Vec<usize> = (0..nv).map(|_| rng.random_range(0..ni)).collect();
    let fj: Vec<usize> = (0..nv).map(|_| rng.random_range(0..nj)).collect();
    let mut t = vec![0.0; nv * ni * nj];
    for v in 0..nv {
        t[(v * ni + fi[v]) * nj + fj[v]] += pv[v];
    }
    DiscreteJoint::from_weights(t, vec![nv, ni, nj])
}

/// Arbitrary joint over three variables, with some zero cells.
pub fn random_joint(seed: u64) -> Result<DiscreteJoint> {
    let mut rng = rng::seeded(seed);
    let dims = vec![card(&mut rng), card(&mut rng), card(&mut rng)];
    let w = random_weights(&mut rng, dims.iter().product(), 0.2);
    DiscreteJoint::from_weights(w, dims)
}

/// `v`, a stochastic code `z_i | v`, and `z_j = f(z_i)` a coarsening.
pub fn coarsening_joint(seed: u64) -> Result<DiscreteJoint> {
    let mut rng = rng::seeded(seed);
    let nv = card(&mut rng);
    let ni = rng.random_range(3..=4);
    let nj = rng.random_range(2..ni);
    let pv = random_weights(&mut rng, nv, 0.0);
    // Surjective coarsening.
    let f: Vec<usize> = (0..ni)
        .map(|z| if z < nj { z } else { rng.random_range(0..nj) })
        .collect();
    let mut t = vec![0.0; nv * ni * nj];
    let total_v: f64 = pv.iter().sum();
    for v in 0..nv {
        let cond = random_weights(&mut rng, ni, 0.25);
        let cs: f64 = cond.iter().sum();
        for zi in 0..ni {
            t[(v * ni + zi) * nj + f[zi]] += pv[v] / total_v * cond[zi] / cs;
        }
    }
    DiscreteJoint::from_weights(t, vec![nv, ni, nj])
}

/// Worst residual over a batch of constructions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionSuite {
    pub trials: usize,
    /// Split identity on deterministic-encoder joints.
    pub max_split: f64,
    /// Chain rule on arbitrary joints.
    pub max_chain: f64,
    /// Reduction identity on coarsening joints.
    pub max_reduction: f64,
}

pub fn decomposition_suite(trials: usize, seed: u64) -> Result<DecompositionSuite> {
    let mut out = DecompositionSuite {
        trials,
        max_split: 0.0,
        max_chain: 0.0,
        max_reduction: 0.0,
    };
    for t in 0..trials as u64 {
        let s = rng::derive_seed(seed, 100, t);
        let DecompositionResiduals { split, .. } =
            mi::verify_decomposition(&deterministic_encoder_joint(s)?)?;
        let DecompositionResiduals { chain, .. } = mi::verify_decomposition(&random_joint(s)?)?;
        let DecompositionResiduals { reduction, .. } =
            mi::verify_decomposition(&coarsening_joint(s)?)?;
        out.max_split = out.max_split.max(split.abs());
        out.max_chain = out.max_chain.max(chain.abs());
        out.max_reduction = out.max_reduction.max(reduction.abs());
    }
    Ok(out)
}

/// Exact JSD objective of the optimal tabular discriminator
/// `D* = p / (p + q)` for positives drawn from `p` and negatives from `q`.
pub fn tabular_jsd_objective(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.len() != negative.len() {
        return Err(Error::shape("positive and negative tables differ in size"));
    }
    let mut total = 0.0;
    for (&p, &q) in positive.iter().zip(negative) {
        let s = p + q;
        if s <= 0.0 {
            continue;
        }
        if p > 0.0 {
            total += p * (p / s).max(mi::LOG_FLOOR).ln();
        }
        if q > 0.0 {
            total += q * (q / s).max(mi::LOG_FLOOR).ln();
        }
    }
    Ok(total)
}

/// Tabular optimum with negatives from the product of the marginals, plus
/// the implied JS mutual-information value `objective - 2 ln(1/2)`.
pub fn tabular_jsd_product(joint: &DiscreteJoint) -> Result<(f64, f64)> {
    if joint.dims().len() != 2 {
        return Err(Error::invalid("tabular JSD needs a two-variable joint"));
    }
    let (na, nb) = (joint.dims()[0], joint.dims()[1]);
    let t = joint.table();
    let pa: Vec<f64> = (0..na).map(|a| (0..nb).map(|b| t[a * nb + b]).sum()).collect();
    let pb: Vec<f64> = (0..nb).map(|b| (0..na).map(|a| t[a * nb + b]).sum()).collect();
    let q: Vec<f64> = (0..na * nb).map(|i| pa[i / nb] * pb[i % nb]).collect();
    let obj = tabular_jsd_objective(t, &q)?;
    Ok((obj, obj - mi::JSD_CHANCE))
}

/// Bivariate standard Gaussian with correlation `rho`, discretized into
/// `cells x cells` bins over `[-half_width, half_width]^2` (midpoint rule).
pub fn discretized_gaussian(rho: f64, cells: usize, half_width: f64) -> Result<DiscreteJoint> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid("|rho| must be < 1"));
    }
    let step = 2.0 * half_width / cells as f64;
    let centre = |i: usize| -half_width + (i as f64 + 0.5) * step;
    let det = 1.0 - rho * rho;
    let mut w = Vec::with_capacity(cells * cells);
    for i in 0..cells {
        for j in 0..cells {
            let (x, y) = (centre(i), centre(j));
            w.push((-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * det)).exp());
        }
    }
    DiscreteJoint::from_weights(w, vec![cells, cells])
}

const KL_MC_CHUNKS: usize = 64;

/// Monte-Carlo estimate of the batch-mean KL to the standard normal:
/// `E_q[log q(z) - log p(z)]` with `samples` draws split evenly over rows.
/// Results do not depend on `exec`.
pub fn kl_monte_carlo(code: &GaussianCode, samples: usize, seed: u64, exec: Exec) -> Result<f64> {
    let rows = code.mean.nrows();
    if rows == 0 || samples < rows {
        return Err(Error::invalid("need at least one sample per row"));
    }
    let per_row = samples / rows;
    let dim = code.mean.ncols();
    let per_chunk = per_row.div_ceil(KL_MC_CHUNKS);
    let row_estimates: Vec<f64> = (0..rows)
        .map(|r| {
            let chunk_sums = exec.map(KL_MC_CHUNKS, |c| {
                let start = c * per_chunk;
                let end = ((c + 1) * per_chunk).min(per_row);
                let mut rng = rng::stream_rng(seed, r as u64, c as u64);
                let mut acc = 0.0;
                for _ in start..end {
                    let mut log_ratio = 0.0;
                    for j in 0..dim {
                        let mu = code.mean[[r, j]];
                        let lv = code.log_var[[r, j]];
                        let eps: f64 = rng.sample(StandardNormal);
                        let z = mu + (0.5 * lv).exp() * eps;
                        // log N(z; mu, e^lv) - log N(z; 0, 1)
                        log_ratio += -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z;
                    }
                    acc += log_ratio;
                }
                acc
            });
            chunk_sums.iter().sum::<f64>() / per_row as f64
        })
        .collect();
    Ok(row_estimates.iter().sum::<f64>() / rows as f64)
}

/// Random diagonal Gaussian code with means in `N(0,1)` and log-variance in
/// `[-2, 2]`.
pub fn random_code(rows: usize, dim: usize, seed: u64) -> GaussianCode {
    let mut rng = rng::seeded(seed);
    let mean = ndarray::Array2::from_shape_simple_fn((rows, dim), || rng.sample(StandardNormal));
    let log_var = ndarray::Array2::from_shape_simple_fn((rows, dim), || rng.random_range(-2.0..2.0));
    GaussianCode { mean, log_var }
}
