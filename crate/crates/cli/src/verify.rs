//! Oracle checks behind `mvsc verify`. Each check reduces to one residual
//! compared against a fixed bound; the report is flat `key=value` text.

use clap::ValueEnum;
use ndarray::Array2;

use mvsc_core::exec::Exec;
use mvsc_core::{metrics, mi, oracle, rng, selfexpr};

/// Deliberate faults for checking that the report catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Negates the closed-form KL before it is compared.
    KlSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// Passes when `value < threshold`.
    Below,
    /// Passes when `value >= threshold`.
    AtLeast,
    /// Passes when `value > threshold`.
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
}

impl Check {
    pub fn pass(&self) -> bool {
        match self.bound {
            Bound::Below => self.value < self.threshold,
            Bound::AtLeast => self.value >= self.threshold,
            Bound::Above => self.value > self.threshold,
        }
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0, |m: f64, &x| m.max(x))
}

fn closed_form_kl(code: &mvsc_core::nets::GaussianCode, fault: Option<Fault>) -> mvsc_core::Result<f64> {
    let kl = mi::kl_to_standard_normal(code)?;
    Ok(if fault == Some(Fault::KlSign) { -kl } else { kl })
}

pub fn run_checks(fault: Option<Fault>) -> mvsc_core::Result<Vec<Check>> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let mut checks = Vec::new();

    let suite = oracle::decomposition_suite(25, 11)?;
    checks.push(Check {
        name: "decomposition_residual",
        value: suite.max_split.max(suite.max_chain).max(suite.max_reduction),
        threshold: 1e-9,
        bound: Bound::Below,
    });

    let mut worst_rel = 0.0f64;
    for s in 0..10 {
        let code = oracle::random_code(4, 6, 100 + s);
        let exact = closed_form_kl(&code, fault)?;
        let mc = oracle::kl_monte_carlo(&code, 1_000_000, 200 + s, Exec::default())?;
        worst_rel = worst_rel.max((mc - exact).abs() / exact.abs());
    }
    checks.push(Check {
        name: "kl_monte_carlo_rel_error",
        value: worst_rel,
        threshold: 0.01,
        bound: Bound::Below,
    });

    let mut min_kl = f64::INFINITY;
    for s in 0..1000 {
        min_kl = min_kl.min(closed_form_kl(&oracle::random_code(3, 5, 10_000 + s), fault)?);
    }
    checks.push(Check {
        name: "kl_min_over_random_codes",
        value: min_kl,
        threshold: 0.0,
        bound: Bound::AtLeast,
    });

    let objectives = [0.0, 0.3, 0.6, 0.9]
        .iter()
        .map(|&rho| Ok(oracle::tabular_jsd_product(&oracle::discretized_gaussian(rho, 60, 5.0)?)?.0))
        .collect::<mvsc_core::Result<Vec<f64>>>()?;
    let min_step = objectives.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "jsd_min_increase_in_rho",
        value: min_step,
        threshold: 0.0,
        bound: Bound::Above,
    });
    checks.push(Check {
        name: "jsd_independent_offset",
        value: (objectives[0] - 2.0 * 0.5f64.ln()).abs(),
        threshold: 1e-3,
        bound: Bound::Below,
    });

    let (mut gd_worst, mut route_worst) = (0.0f64, 0.0f64);
    for s in 0..5 {
        let mut r = rng::seeded(300 + s);
        let z = Array2::from_shape_simple_fn((50, 8), || r.sample(StandardNormal));
        let primal = selfexpr::closed_form_selfexpr(&z, 1.0, Exec::default())?;
        let dual = selfexpr::ridge_selfexpr_dual(&z, 1.0, Exec::default())?;
        let fitted = selfexpr::fit_selfexpr_gradient(&z, 1.0, 600, None)?;
        gd_worst = gd_worst.max(max_abs_diff(fitted.matrix(), primal.matrix()));
        route_worst = route_worst.max(max_abs_diff(dual.matrix(), primal.matrix()));
    }
    checks.push(Check {
        name: "selfexpr_gradient_vs_closed_form",
        value: gd_worst,
        threshold: 1e-4,
        bound: Bound::Below,
    });
    checks.push(Check {
        name: "selfexpr_primal_vs_dual",
        value: route_worst,
        threshold: 1e-9,
        bound: Bound::Below,
    });

    let mut r = rng::seeded(5);
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let k = r.random_range(2..=6);
        let n = r.random_range(k..=200);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        if metrics::accuracy(&truth, &pred)? != metrics::brute_force_accuracy(&truth, &pred)? {
            mismatches += 1;
        }
    }
    checks.push(Check {
        name: "hungarian_brute_force_mismatches",
        value: mismatches as f64,
        threshold: 1.0,
        bound: Bound::Below,
    });

    Ok(checks)
}

pub fn failed(checks: &[Check]) -> Vec<&'static str> {
    checks.iter().filter(|c| !c.pass()).map(|c| c.name).collect()
}

pub fn report(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        let op = match c.bound {
            Bound::Below => "lt",
            Bound::AtLeast => "ge",
            Bound::Above => "gt",
        };
        out.push_str(&format!("{}.value={:e}\n", c.name, c.value));
        out.push_str(&format!("{}.bound={op}\n", c.name));
        out.push_str(&format!("{}.threshold={:e}\n", c.name, c.threshold));
        out.push_str(&format!("{}.pass={}\n", c.name, c.pass()));
    }
    let bad = failed(checks);
    out.push_str(&format!("overall.pass={}\n", bad.is_empty()));
    out.push_str(&format!("overall.failed={}\n", bad.join(",")));
    out
}
