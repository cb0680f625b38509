//! Design verification via the directional-derivative (equivalence)
//! criterion.
//!
//! For a candidate design `xi` with worst-case parameter `theta*`, the
//! sensitivity `psi(x) = I(x, theta*) - value(xi)` must be non-positive
//! everywhere on the design space, and zero on the support, for `xi` to be
//! optimal. Both conditions are checked to a relative tolerance, and the
//! concavity of the criterion turns the largest positive excursion into a
//! lower bound on the design's efficiency.

use crate::criteria::{CriterionKind, Design, Evaluator, Problem};
use crate::error::{Error, Result, Warning};
use crate::nelder::golden_max;
use rayon::prelude::*;

/// Verdict of a verification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Optimal,
    NotOptimal,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Optimal => "OPTIMAL",
            Verdict::NotOptimal => "NOT_OPTIMAL",
        })
    }
}

/// Tuning for [`verify`].
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Relative tolerance: violations and support residuals are compared
    /// against `tol_rel * |value|`.
    pub tol_rel: f64,
    /// Scan-grid resolution.
    pub grid_n: usize,
    /// Seed for the worst-case search.
    pub seed: u64,
    /// Starts for the worst-case search.
    pub inner_starts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { tol_rel: 1e-4, grid_n: 2001, seed: 0, inner_starts: 16 }
    }
}

/// The full sensitivity analysis of a design.
#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub verdict: Verdict,
    pub value: f64,
    pub theta2_star: Vec<f64>,
    /// `max_x psi(x)`, after a local polish around the best grid point.
    pub max_violation: f64,
    pub argmax_x: f64,
    /// `psi` at each support point (all near zero for an optimal design).
    pub support_residuals: Vec<f64>,
    /// `sum_i w_i psi(x_i)` — zero by construction up to round-off.
    pub weighted_sum: f64,
    /// `value / (value + max(0, max_violation))`: a lower bound on the
    /// efficiency relative to the (unknown) optimum.
    pub efficiency_bound: f64,
    /// Whether the bound inherits quadrature/dual-solve error from the
    /// point divergence (true for the divergence-based criteria).
    pub efficiency_bound_heuristic: bool,
    /// The scanned sensitivity curve as `(x, psi(x))` pairs.
    pub psi: Vec<(f64, f64)>,
    pub warnings: Vec<Warning>,
}

/// Verifies a design against the equivalence criterion.
///
/// The worst-case parameter is searched once (heavily, from `cfg.seed`),
/// then the sensitivity is scanned on a uniform grid, its best point
/// polished by golden section, and the support residuals measured at the
/// same parameter.
pub fn verify(problem: &Problem, design: &Design, cfg: &VerifyConfig) -> Result<SensitivityReport> {
    problem.validate()?;
    if cfg.grid_n < 2 {
        return Err(Error::Domain("verification needs grid_n >= 2".into()));
    }
    let (design, mut warnings) = {
        let (d, w) = design.normalised()?;
        (d.sorted(), w.into_iter().collect::<Vec<_>>())
    };
    for &x in &design.points {
        if x < problem.x_lo - 1e-12 || x > problem.x_hi + 1e-12 {
            return Err(Error::Design(format!(
                "support point {x} lies outside the design space [{}, {}]",
                problem.x_lo, problem.x_hi
            )));
        }
    }
    let ev = Evaluator::new(problem);
    let inner = ev.inner_minimize(&design, None, cfg.inner_starts, cfg.seed)?;
    warnings.extend(inner.warnings.iter().cloned());
    let value = inner.value;
    let theta = inner.theta2;

    let width = problem.x_hi - problem.x_lo;
    let grid: Vec<f64> = (0..cfg.grid_n)
        .map(|i| problem.x_lo + width * i as f64 / (cfg.grid_n - 1) as f64)
        .collect();
    let divs: Vec<f64> = grid
        .par_iter()
        .map(|&x| match ev.point_divergence(x, &theta) {
            Ok(pd) => pd.value,
            Err(_) => f64::NAN,
        })
        .collect();
    let psi: Vec<(f64, f64)> = grid.iter().zip(&divs).map(|(&x, &d)| (x, d - value)).collect();

    // Grid argmax (ties toward the smaller x), then a golden-section polish
    // on the bracketing interval.
    let mut star = 0usize;
    let mut star_val = f64::NEG_INFINITY;
    for (i, &d) in divs.iter().enumerate() {
        if d.is_finite() && d > star_val {
            star = i;
            star_val = d;
        }
    }
    if !star_val.is_finite() {
        return Err(Error::Domain("sensitivity scan found no feasible grid point".into()));
    }
    let h = width / (cfg.grid_n - 1) as f64;
    let lo = (grid[star] - h).max(problem.x_lo);
    let hi = (grid[star] + h).min(problem.x_hi);
    let argmax_x = golden_max(
        |u| match ev.point_divergence(u, &theta) {
            Ok(pd) => pd.value,
            Err(_) => f64::NEG_INFINITY,
        },
        lo,
        hi,
        1e-11 * width,
    );
    let polished =
        ev.point_divergence(argmax_x, &theta).map(|pd| pd.value).unwrap_or(star_val).max(star_val);
    let max_violation = polished - value;

    let mut support_residuals = Vec::with_capacity(design.points.len());
    let mut weighted_sum = 0.0;
    for (&x, &w) in design.points.iter().zip(&design.weights) {
        let r = ev.point_divergence(x, &theta)?.value - value;
        support_residuals.push(r);
        weighted_sum += w * r;
    }

    let scale = value.abs().max(f64::MIN_POSITIVE);
    let ok_violation = max_violation <= cfg.tol_rel * scale;
    let ok_support = support_residuals.iter().all(|r| r.abs() <= cfg.tol_rel * scale);
    let verdict = if ok_violation && ok_support { Verdict::Optimal } else { Verdict::NotOptimal };

    let efficiency_bound = (value / (value + max_violation.max(0.0))).clamp(0.0, 1.0);
    let efficiency_bound_heuristic =
        matches!(problem.criterion, CriterionKind::Kl | CriterionKind::SklA | CriterionKind::SklB);

    Ok(SensitivityReport {
        verdict,
        value,
        theta2_star: theta,
        max_violation,
        argmax_x,
        support_residuals,
        weighted_sum,
        efficiency_bound,
        efficiency_bound_heuristic,
        psi,
        warnings,
    })
}
