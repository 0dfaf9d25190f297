//! Self-expressive coefficients, affinity fusion and spectral clustering.
//!
//! Codes are stored with samples as rows (`Z` is `n x d`). Sample `j` is
//! reconstructed from column `j` of `C`: `z~_j = sum_k C[k, j] z_k`, so the
//! self-expressed matrix is `Z~ = C^T Z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;
use crate::tape::{Tape, Var};

/// `n x n` coefficients with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfExprMatrix {
    c: Array2<f64>,
    pub view_index: usize,
}

impl SelfExprMatrix {
    pub fn new(c: Array2<f64>, view_index: usize) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::shape(format!("C must be square, got {:?}", c.dim())));
        }
        if c.diag().iter().any(|&x| x != 0.0) {
            return Err(Error::invalid("C has a nonzero diagonal"));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("self-expressive matrix".into()));
        }
        Ok(SelfExprMatrix { c, view_index })
    }

    /// Zeroes the diagonal of `c` before wrapping it.
    pub fn from_unmasked(mut c: Array2<f64>, view_index: usize) -> Result<Self> {
        c.diag_mut().fill(0.0);
        SelfExprMatrix::new(c, view_index)
    }

    pub fn zeros(n: usize, view_index: usize) -> Self {
        SelfExprMatrix {
            c: Array2::zeros((n, n)),
            view_index,
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.c
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }
}

/// Symmetric, nonnegative, zero-diagonal similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    w: Array2<f64>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl Affinity {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let n = w.nrows();
        if w.ncols() != n {
            return Err(Error::shape("affinity must be square"));
        }
        for i in 0..n {
            if w[[i, i]] != 0.0 {
                return Err(Error::invalid("affinity has a nonzero diagonal"));
            }
            for j in 0..n {
                let x = w[[i, j]];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::invalid("affinity entries must be finite and >= 0"));
                }
                if (x - w[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid("affinity is not symmetric"));
                }
            }
        }
        Ok(Affinity { w })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Same affinity with samples reordered: entry `(r, s)` of the result is
    /// `(order[r], order[s])` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Affinity {
        let w = self.w.select(Axis(0), order).select(Axis(1), order);
        Affinity { w }
    }
}

/// `Z~ = C^T Z`.
pub fn self_express(zc: &Array2<f64>, c: &SelfExprMatrix) -> Result<Array2<f64>> {
    if zc.nrows() != c.n() {
        return Err(Error::shape(format!(
            "codes have {} rows but C is {} x {}",
            zc.nrows(),
            c.n(),
            c.n()
        )));
    }
    Ok(c.matrix().t().dot(zc))
}

/// `|Z - C^T Z|_F^2 + lambda |C|_F^2`
pub fn selfexpr_loss(zc: &Array2<f64>, c: &SelfExprMatrix, lambda_se: f64) -> Result<f64> {
    check_lambda(lambda_se)?;
    let rec = self_express(zc, c)?;
    let resid: f64 = (zc - &rec).iter().map(|x| x * x).sum();
    let reg: f64 = c.matrix().iter().map(|x| x * x).sum();
    Ok(resid + lambda_se * reg)
}

fn check_lambda(lambda_se: f64) -> Result<()> {
    if !(lambda_se >= 0.0) || !lambda_se.is_finite() {
        return Err(Error::invalid(format!("lambda_se must be >= 0 (got {lambda_se})")));
    }
    Ok(())
}

/// Tape form of [`self_express`]. `c_raw` is the unconstrained parameter;
/// its diagonal is masked so it never contributes and never moves.
pub fn self_express_on_tape(tape: &mut Tape, zc: Var, c_raw: Var) -> (Var, Var) {
    let c = tape.mask_diag(c_raw);
    (tape.matmul_tn(c, zc), c)
}

/// Tape form of [`selfexpr_loss`]; also returns `Z~`.
pub fn selfexpr_loss_on_tape(
    tape: &mut Tape,
    zc: Var,
    c_raw: Var,
    lambda_se: f64,
) -> Result<(Var, Var)> {
    check_lambda(lambda_se)?;
    let (n, _) = tape.shape(zc);
    if tape.shape(c_raw) != (n, n) {
        return Err(Error::shape("C must be n x n for n code rows"));
    }
    let (rec, c) = self_express_on_tape(tape, zc, c_raw);
    let diff = tape.sub(zc, rec);
    let resid = tape.sum_squares(diff);
    let reg = tape.sum_squares(c);
    let reg = tape.scale(reg, lambda_se);
    Ok((tape.add(resid, reg), rec))
}

/// Exact minimizer of [`selfexpr_loss`] for fixed codes, one ridge system
/// per sample: `c_j = (A_j^T A_j + lambda I)^{-1} A_j^T z_j` with `A_j` the
/// other codes as columns.
pub fn closed_form_selfexpr(zc: &Array2<f64>, lambda_se: f64, exec: Exec) -> Result<SelfExprMatrix> {
    if !(lambda_se > 0.0) {
        return Err(Error::invalid("closed-form self-expression needs lambda_se > 0"));
    }
    let n = zc.nrows();
    let d = zc.ncols();
    let columns: Vec<Vec<f64>> = exec.map(n, |j| {
        let others: Vec<usize> = (0..n).filter(|&k| k != j).collect();
        let a = DMatrix::from_fn(d, n - 1, |r, c| zc[[others[c], r]]);
        let z = DVector::from_fn(d, |r, _| zc[[j, r]]);
        let mut lhs = a.transpose() * &a;
        for i in 0..n - 1 {
            lhs[(i, i)] += lambda_se;
        }
        let rhs = a.transpose() * z;
        let sol = lhs
            .cholesky()
            .expect("ridge system is positive definite for lambda > 0")
            .solve(&rhs);
        let mut col = vec![0.0; n];
        for (c, &k) in others.iter().enumerate() {
            col[k] = sol[c];
        }
        col
    });
    let mut c = Array2::zeros((n, n));
    for (j, col) in columns.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            c[[k, j]] = v;
        }
    }
    SelfExprMatrix::new(c, 0)
}

/// Same minimizer through the `d x d` dual system
/// `c_j = A_j^T (A_j A_j^T + lambda I)^{-1} z_j`, with
/// `A_j A_j^T = Z^T Z - z_j z_j^T`. Cheap when `d << n`.
pub fn ridge_selfexpr_dual(zc: &Array2<f64>, lambda_se: f64, exec: Exec) -> Result<SelfExprMatrix> {
    if !(lambda_se > 0.0) {
        return Err(Error::invalid("ridge self-expression needs lambda_se > 0"));
    }
    let n = zc.nrows();
    let d = zc.ncols();
    let zt = DMatrix::from_fn(d, n, |r, c| zc[[c, r]]);
    let gram = &zt * zt.transpose();
    let columns: Vec<Vec<f64>> = exec.map(n, |j| {
        let zj = zt.column(j).into_owned();
        let mut m = &gram - &zj * zj.transpose();
        for i in 0..d {
            m[(i, i)] += lambda_se;
        }
        let y = m
            .cholesky()
            .expect("dual ridge system is positive definite for lambda > 0")
            .solve(&zj);
        let coef = zt.transpose() * y;
        let mut col: Vec<f64> = coef.iter().copied().collect();
        col[j] = 0.0;
        col
    });
    let mut c = Array2::zeros((n, n));
    for (j, col) in columns.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            c[[k, j]] = v;
        }
    }
    SelfExprMatrix::new(c, 0)
}

/// Minimizes [`selfexpr_loss`] over `C` with the codes frozen, by
/// Nesterov-accelerated gradient descent on tape gradients. The step is
/// `1 / L` with `L = 2 (sigma_max(Z)^2 + lambda)`.
pub fn fit_selfexpr_gradient(
    zc: &Array2<f64>,
    lambda_se: f64,
    steps: usize,
    init: Option<&SelfExprMatrix>,
) -> Result<SelfExprMatrix> {
    check_lambda(lambda_se)?;
    let n = zc.nrows();
    let d = zc.ncols();
    let zt = DMatrix::from_fn(d, n, |r, c| zc[[c, r]]);
    let top = SymmetricEigen::new(&zt * zt.transpose())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let lipschitz = 2.0 * (top + lambda_se);
    let step = 1.0 / lipschitz;

    let mut c = init.map_or_else(|| Array2::zeros((n, n)), |m| m.matrix().clone());
    let mut prev = c.clone();
    for t in 0..steps {
        let momentum = t as f64 / (t as f64 + 3.0);
        let look = &c + &((&c - &prev) * momentum);
        let mut tape = Tape::new();
        let z = tape.leaf(zc.clone());
        let cv = tape.leaf(look.clone());
        let (loss, _) = selfexpr_loss_on_tape(&mut tape, z, cv, lambda_se)?;
        let g = tape.backward(loss).get(cv);
        prev = c;
        c = look - g * step;
        c.diag_mut().fill(0.0);
    }
    SelfExprMatrix::new(c, init.map_or(0, |m| m.view_index))
}

/// `W = (|C_bar| + |C_bar|^T) / 2` with `C_bar` the mean over views.
pub fn fuse_affinities(c_list: &[SelfExprMatrix]) -> Result<Affinity> {
    let first = c_list
        .first()
        .ok_or_else(|| Error::invalid("no self-expressive matrices to fuse"))?;
    let n = first.n();
    let mut mean = Array2::zeros((n, n));
    for c in c_list {
        if c.n() != n {
            return Err(Error::shape("self-expressive matrices differ in size"));
        }
        mean += c.matrix();
    }
    mean /= c_list.len() as f64;
    let abs = mean.mapv(f64::abs);
    let mut w = (&abs + &abs.t()) * 0.5;
    w.diag_mut().fill(0.0);
    Affinity::new(w)
}

/// Degree floor for the normalized Laplacian.
pub const DEGREE_FLOOR: f64 = 1e-12;

/// k-means settings used by [`spectral_cluster`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            restarts: 20,
            max_iter: 300,
            rel_tol: 1e-6,
        }
    }
}

/// Eigenvectors of the `k` smallest eigenvalues of
/// `I - D^{-1/2} W D^{-1/2}`, rows scaled to unit length.
pub fn spectral_embedding(w: &Affinity, k: usize) -> Result<Array2<f64>> {
    let n = w.n();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= k <= n (k = {k}, n = {n})")));
    }
    let m = w.matrix();
    let inv_sqrt: Vec<f64> = m
        .rows()
        .into_iter()
        .map(|r| 1.0 / r.sum().max(DEGREE_FLOOR).sqrt())
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let off = -inv_sqrt[i] * m[[i, j]] * inv_sqrt[j];
        if i == j {
            1.0 + off
        } else {
            off
        }
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut emb = Array2::zeros((n, k));
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // Fix the sign so the embedding does not depend on solver conventions.
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            emb[[r, c]] = sign * v[r];
        }
    }
    for mut row in emb.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|x| x / norm);
        }
    }
    Ok(emb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // Every point coincides with a centre; take an unused index.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

fn lloyd(x: &Array2<f64>, mut centroids: Array2<f64>, cfg: &KMeansConfig) -> KMeansResult {
    let n = x.nrows();
    let k = centroids.nrows();
    let mut labels = vec![0usize; n];
    let mut prev_inertia = f64::INFINITY;
    let mut inertia = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (best, bd) = (0..k)
                .map(|c| (c, sq_dist(x.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            labels[i] = best;
            dist[i] = bd;
        }
        inertia = dist.iter().sum();

        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += &x.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the worst-fit point.
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
                    .unwrap();
                centroids.row_mut(c).assign(&x.row(far));
                dist[far] = 0.0;
            } else {
                let mean: Array1<f64> = &sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        if prev_inertia.is_finite() && (prev_inertia - inertia).abs() <= cfg.rel_tol * prev_inertia.max(f64::MIN_POSITIVE) {
            break;
        }
        prev_inertia = inertia;
    }
    // Final assignment against the last centroids.
    let mut total = 0.0;
    for i in 0..n {
        let (best, bd) = (0..k)
            .map(|c| (c, sq_dist(x.row(i), centroids.row(c))))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
        labels[i] = best;
        total += bd;
    }
    let _ = inertia;
    KMeansResult {
        labels,
        centroids,
        inertia: total,
    }
}

/// k-means++ seeding and Lloyd iterations, best of `cfg.restarts`.
pub fn kmeans(x: &Array2<f64>, k: usize, seed: u64, cfg: &KMeansConfig, exec: Exec) -> Result<KMeansResult> {
    if k == 0 || k > x.nrows() {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= k <= n (k = {k}, n = {})",
            x.nrows()
        )));
    }
    let runs = exec.map(cfg.restarts.max(1), |r| {
        let mut rng = rng::stream_rng(seed, rng::streams::CLUSTER, r as u64);
        let init = kmeans_plus_plus(x, k, &mut rng);
        lloyd(x, init, cfg)
    });
    Ok(runs
        .into_iter()
        .reduce(|best, cur| if cur.inertia < best.inertia { cur } else { best })
        .unwrap())
}

/// Normalized spectral clustering of an affinity into `k` groups.
pub fn spectral_cluster(w: &Affinity, k: usize, seed: u64, exec: Exec) -> Result<Vec<usize>> {
    spectral_cluster_with(w, k, seed, &KMeansConfig::default(), exec)
}

pub fn spectral_cluster_with(
    w: &Affinity,
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
    exec: Exec,
) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("spectral clustering needs k >= 2 (k = {k})")));
    }
    let emb = spectral_embedding(w, k)?;
    Ok(kmeans(&emb, k, seed, cfg, exec)?.labels)
}
