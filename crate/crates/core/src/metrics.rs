//! External clustering indices: accuracy under the best one-to-one label
//! matching, normalized mutual information and the adjusted Rand index.

use serde::Serialize;

use crate::error::{Error, Result};

/// NMI normalization recorded in every report.
pub const NMI_NORMALIZATION: &str = "geometric";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub n: usize,
    pub k: usize,
    pub nmi_normalization: &'static str,
    #[serde(skip)]
    pub confusion: Vec<Vec<usize>>,
}

/// `table[t][p]` counts samples with true label `t` and predicted `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub table: Vec<Vec<usize>>,
    pub n: usize,
}

impl Contingency {
    pub fn new(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::shape(format!(
                "label vectors differ in length ({} vs {})",
                truth.len(),
                pred.len()
            )));
        }
        let rows = truth.iter().max().map_or(0, |m| m + 1);
        let cols = pred.iter().max().map_or(0, |m| m + 1);
        let mut table = vec![vec![0usize; cols]; rows];
        for (&t, &p) in truth.iter().zip(pred) {
            table[t][p] += 1;
        }
        Ok(Contingency {
            table,
            n: truth.len(),
        })
    }

    fn rows(&self) -> usize {
        self.table.len()
    }

    fn cols(&self) -> usize {
        self.table.first().map_or(0, Vec::len)
    }

    fn row_sums(&self) -> Vec<usize> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        (0..self.cols())
            .map(|c| self.table.iter().map(|r| r[c]).sum())
            .collect()
    }

    /// Square `k x k` copy padded with zeros, `k = max(rows, cols)`.
    fn square(&self) -> Vec<Vec<usize>> {
        let k = self.rows().max(self.cols());
        let mut sq = vec![vec![0; k]; k];
        for (r, row) in self.table.iter().enumerate() {
            sq[r][..row.len()].copy_from_slice(row);
        }
        sq
    }
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials, O(k^3)). `result[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if matched_row[j] > 0 {
            assignment[matched_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Fraction of samples matched under the best label bijection.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let ct = Contingency::new(truth, pred)?;
    if ct.n == 0 {
        return Err(Error::invalid("empty label vectors"));
    }
    let sq = ct.square();
    let cost: Vec<Vec<f64>> = sq
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let assign = hungarian(&cost);
    let matched: usize = assign.iter().enumerate().map(|(r, &c)| sq[r][c]).sum();
    Ok(matched as f64 / ct.n as f64)
}

/// Label count above which [`brute_force_accuracy`] refuses to run.
pub const BRUTE_FORCE_MAX_K: usize = 6;

/// Exhaustive maximization over every label permutation (`k <= 6`).
pub fn brute_force_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let ct = Contingency::new(truth, pred)?;
    if ct.n == 0 {
        return Err(Error::invalid("empty label vectors"));
    }
    let sq = ct.square();
    let k = sq.len();
    if k > BRUTE_FORCE_MAX_K {
        return Err(Error::invalid(format!(
            "brute-force accuracy supports k <= {BRUTE_FORCE_MAX_K} (k = {k})"
        )));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let matched = p.iter().enumerate().map(|(r, &c)| sq[r][c]).sum();
        best = best.max(matched);
    });
    Ok(best as f64 / ct.n as f64)
}

fn permute(p: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permute(p, start + 1, visit);
        p.swap(start, i);
    }
}

fn entropy_of_counts(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(truth; pred) / sqrt(H(truth) H(pred))` in nats. Both partitions
/// trivial gives 1; exactly one trivial gives 0.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let ct = Contingency::new(truth, pred)?;
    if ct.n == 0 {
        return Err(Error::invalid("empty label vectors"));
    }
    let n = ct.n as f64;
    let a = ct.row_sums();
    let b = ct.col_sums();
    let ha = entropy_of_counts(&a, ct.n);
    let hb = entropy_of_counts(&b, ct.n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    // One nonzero cell per row and column: the partitions coincide up to
    // relabeling and NMI is exactly 1, which the float sum can miss by an ulp.
    let used = |xs: &[usize]| xs.iter().filter(|&&c| c > 0).count();
    let cells: usize = ct.table.iter().map(|row| used(row)).sum();
    if cells == used(&a) && cells == used(&b) {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (r, row) in ct.table.iter().enumerate() {
        for (c, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[r] as f64 * b[c] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let ct = Contingency::new(truth, pred)?;
    if ct.n == 0 {
        return Err(Error::invalid("empty label vectors"));
    }
    let sum_ij: f64 = ct.table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = ct.row_sums().into_iter().map(choose2).sum();
    let sum_b: f64 = ct.col_sums().into_iter().map(choose2).sum();
    let total = choose2(ct.n);
    let expected = if total > 0.0 { sum_a * sum_b / total } else { 0.0 };
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    let numer = sum_ij - expected;
    if denom == 0.0 {
        // Both partitions trivial (all singletons or one block), even when
        // they coincide.
        return Ok(if numer == 0.0 { 0.0 } else { 1.0 });
    }
    Ok(numer / denom)
}

pub fn evaluate(truth: &[usize], pred: &[usize]) -> Result<MetricsReport> {
    let ct = Contingency::new(truth, pred)?;
    let k = ct.rows().max(ct.cols());
    Ok(MetricsReport {
        acc: accuracy(truth, pred)?,
        nmi: nmi(truth, pred)?,
        ari: ari(truth, pred)?,
        n: truth.len(),
        k,
        nmi_normalization: NMI_NORMALIZATION,
        confusion: ct.square(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Mean over rows of `|cos(a_r, b_r)|`; zero rows count as 0.
pub fn matched_abs_cosine(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.nrows() == 0 {
        return Err(Error::invalid("cosine inputs must be equal-shaped and non-empty"));
    }
    let total: f64 = a.rows().into_iter().zip(b.rows()).map(|(x, y)| cosine(x, y).abs()).sum();
    Ok(total / a.nrows() as f64)
}

/// Cosine similarity between every row of the stacked blocks: for blocks
/// `B_1..B_q` of `s` rows each, a `qs x qs` symmetric matrix with unit
/// diagonal on nonzero rows.
pub fn block_cosine_matrix(blocks: &[&ndarray::Array2<f64>]) -> Result<ndarray::Array2<f64>> {
    let first = blocks.first().ok_or_else(|| Error::invalid("no blocks"))?;
    if blocks.iter().any(|b| b.dim() != first.dim()) {
        return Err(Error::invalid("cosine blocks must share one shape"));
    }
    let rows: Vec<ndarray::ArrayView1<f64>> = blocks.iter().flat_map(|b| b.rows()).collect();
    let m = rows.len();
    let mut out = ndarray::Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let c = cosine(rows[i], rows[j]);
            out[[i, j]] = c;
            out[[j, i]] = c;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(brute_force_accuracy(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(brute_force_accuracy(&[0, 0, 1], &[1, 1, 0]).unwrap(), 1.0);
        let many: Vec<usize> = (0..7).collect();
        assert!(brute_force_accuracy(&many, &many).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_instance() {
        let mut rng = crate::rng::seeded(3);
        let truth: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<usize> = (0..200).map(|_| rng.random_range(0..5)).collect();
        assert_eq!(
            accuracy(&truth, &pred).unwrap(),
            brute_force_accuracy(&truth, &pred).unwrap()
        );
    }

    #[test]
    fn unequal_label_counts_are_padded() {
        // Three predicted clusters against two true ones.
        let acc = accuracy(&[0, 0, 0, 1, 1, 1], &[0, 0, 2, 1, 1, 1]).unwrap();
        assert_abs_diff_eq!(acc, 5.0 / 6.0, epsilon = 1e-15);
        assert_eq!(acc, brute_force_accuracy(&[0, 0, 0, 1, 1, 1], &[0, 0, 2, 1, 1, 1]).unwrap());
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]).unwrap(), 1.0);
        // Product grid: truth = row, pred = column of a 2 x 3 layout.
        let truth = [0, 0, 0, 1, 1, 1];
        let pred = [0, 1, 2, 0, 1, 2];
        assert_eq!(nmi(&truth, &pred).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
        // Unused label values leave empty rows and columns.
        let t = [0, 0, 3, 3, 3, 5, 0];
        let p = [4, 4, 1, 1, 1, 2, 4];
        assert_eq!(nmi(&t, &p).unwrap(), 1.0);
        assert!(nmi(&t, &[4, 4, 1, 1, 2, 2, 4]).unwrap() < 1.0);
    }

    #[test]
    fn nmi_hand_computed_two_by_two() {
        // truth=[0,0,1,1], pred=[0,1,1,1]: table [[1,1],[0,2]].
        let ln = f64::ln;
        let mi = 0.25 * ln(4.0 * 1.0 / (2.0 * 1.0)) + 0.25 * ln(4.0 * 1.0 / (2.0 * 3.0))
            + 0.5 * ln(4.0 * 2.0 / (2.0 * 3.0));
        let ht = ln(2.0);
        let hp = -(0.25 * ln(0.25) + 0.75 * ln(0.75));
        let expect = mi / (ht * hp).sqrt();
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[1, 1, 2, 2, 0]).unwrap(), 1.0);
        // truth=[0,0,1,1], pred=[0,1,0,1]: sum_ij = 0, sum_a = sum_b = 2,
        // total = 6, expected = 4/6, max = 2 -> (0 - 2/3) / (2 - 2/3) = -0.5.
        assert_abs_diff_eq!(ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), -0.5, epsilon = 1e-15);
        assert_eq!(ari(&[0, 0, 0], &[0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn random_predictions_have_zero_mean_ari() {
        let mut rng = crate::rng::seeded(17);
        let truth: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let draws = 1000;
        let mean: f64 = (0..draws)
            .map(|_| {
                let pred: Vec<usize> = (0..200).map(|_| rng.random_range(0..4)).collect();
                ari(&truth, &pred).unwrap()
            })
            .sum::<f64>()
            / draws as f64;
        assert!(mean.abs() < 0.02, "mean ARI {mean}");
    }

    #[test]
    fn relabeling_invariance() {
        let mut rng = crate::rng::seeded(2);
        let truth: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
        let pred: Vec<usize> = (0..60).map(|_| rng.random_range(0..4)).collect();
        let mut relabel: Vec<usize> = (0..4).collect();
        relabel.shuffle(&mut rng);
        let pred2: Vec<usize> = pred.iter().map(|&l| relabel[l]).collect();
        let a = evaluate(&truth, &pred).unwrap();
        let b = evaluate(&truth, &pred2).unwrap();
        assert_abs_diff_eq!(a.acc, b.acc, epsilon = 1e-15);
        assert_abs_diff_eq!(a.nmi, b.nmi, epsilon = 1e-12);
        assert_abs_diff_eq!(a.ari, b.ari, epsilon = 1e-12);
    }

    #[test]
    fn report_json_has_flat_keys() {
        let r = evaluate(&[0, 1, 1], &[1, 0, 0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["acc", "nmi", "ari", "n", "k", "nmi_normalization"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["nmi_normalization"], "geometric");
    }
}
