//! Distances between observation densities at a single design point:
//! parametric Kullback–Leibler divergences and the two semi-parametric
//! variants obtained by minimising over all densities with a prescribed
//! mean.
//!
//! Directions follow the discrimination setup throughout: the *second*
//! model's density is the divergence's first argument. [`kl_point`]
//! evaluates `KL(f2 || f1)`; [`reciprocal_tilt_point`] evaluates
//! `inf KL(q || f1)` over densities `q` with mean `eta2` (the infimum is
//! attained by the reciprocal tilt of `f1`); [`exp_tilt_point`] evaluates
//! `inf KL(q || f2)` over densities `q` with mean `eta1`, attained by an
//! exponential tilt of `f2`.

use crate::error::{Error, Result};
use crate::lambda::{self, DensityNodes, LambdaSolution, SolverConfig};
use crate::models::{Density, DensityFamily, DensityKind};
use crate::quad;

/// A single-point divergence value plus the dual multiplier that produced
/// it, when one exists.
#[derive(Debug, Clone, Copy)]
pub struct PointDivergence {
    pub value: f64,
    pub lambda: Option<f64>,
}

/// Kullback–Leibler divergence `KL(p || q)` by adaptive quadrature over the
/// support of `p`, which must be contained in the support of `q`.
pub fn kl_divergence(p: &Density, q: &Density, rel_tol: f64) -> Result<f64> {
    let (plo, phi) = p.support();
    let (qlo, qhi) = q.support();
    if !plo.is_finite() || !phi.is_finite() {
        return Err(Error::UnboundedSupport { context: "KL quadrature" });
    }
    let slack = 1e-12 * (phi - plo).abs().max(1.0);
    if plo < qlo - slack || phi > qhi + slack {
        return Err(Error::SupportMismatch { lo1: plo, hi1: phi, lo2: qlo, hi2: qhi });
    }
    let r = quad::integrate(
        |y| {
            let fp = p.pdf(y);
            if fp <= 0.0 {
                0.0
            } else {
                fp * (fp.ln() - q.ln_pdf(y))
            }
        },
        plo,
        phi,
        rel_tol,
    )?;
    Ok(r.value)
}

/// `KL(f2 || f1)` between family members located at `(e2, v2)` and
/// `(e1, v1)`, using closed forms where the families admit them.
///
/// * two Normal kinds: `log(s1/s2)/2 + (v2 + (e2-e1)^2)/(2 v1) - 1/2`;
/// * two lognormal kinds: the Gaussian closed form applied to the
///   underlying normals (the mild quantile truncation is ignored — exact
///   truncated supports at different locations never nest, and the
///   divergence of interest is the one between the untruncated laws);
/// * anything else: quadrature over the support of `f2`, provided it is
///   contained in the support of `f1`.
pub fn kl_point(
    fam1: &DensityFamily,
    e1: f64,
    v1: f64,
    fam2: &DensityFamily,
    e2: f64,
    v2: f64,
) -> Result<f64> {
    match (&fam1.kind, &fam2.kind) {
        (DensityKind::Normal, DensityKind::Normal) => Ok(normal_kl(e2, v2, e1, v1)),
        (DensityKind::TruncatedLognormal { .. }, DensityKind::TruncatedLognormal { .. }) => {
            if !(e1 > 0.0) || !(e2 > 0.0) {
                return Err(Error::Domain(format!(
                    "lognormal KL needs positive means: e1 = {e1}, e2 = {e2}"
                )));
            }
            let sp2 = (1.0 + v2 / (e2 * e2)).ln();
            let mp = e2.ln() - 0.5 * sp2;
            let sq2 = (1.0 + v1 / (e1 * e1)).ln();
            let mq = e1.ln() - 0.5 * sq2;
            Ok(normal_kl(mp, sp2, mq, sq2))
        }
        _ => {
            let p = fam2.at(e2, v2)?;
            let q = fam1.at(e1, v1)?;
            kl_divergence(&p, &q, 1e-10)
        }
    }
}

/// `KL(N(mp, sp2) || N(mq, sq2))`.
fn normal_kl(mp: f64, sp2: f64, mq: f64, sq2: f64) -> f64 {
    let dm = mp - mq;
    0.5 * ((sq2 / sp2).ln() + (sp2 + dm * dm) / sq2 - 1.0)
}

/// Squared-gap divergence used by the equal-variance Gaussian criterion:
/// `(e1 - e2)^2 / v2`.
pub fn normal_gap_point(e1: f64, e2: f64, v2: f64) -> f64 {
    let d = e1 - e2;
    d * d / v2
}

/// `inf KL(q || f1)` over densities `q` on the support of `f1` with mean
/// `m`, where `f1` is the density sampled in `nodes`.
///
/// The infimum equals `integral f1 log(1 + lambda (y - m)) dy` at the dual
/// multiplier solving the reciprocal-tilt equation, and is attained by
/// `q*(y) = f1(y) / (1 + lambda (y - m))`.
pub fn reciprocal_tilt_point(
    nodes: &DensityNodes,
    m: f64,
    cfg: &SolverConfig,
    warm: Option<f64>,
) -> Result<(PointDivergence, LambdaSolution)> {
    let sol = lambda::solve_reciprocal_tilt(nodes, m, cfg, warm)?;
    if sol.lambda == 0.0 {
        return Ok((PointDivergence { value: 0.0, lambda: Some(0.0) }, sol));
    }
    let mut value = 0.0;
    for (&y, &f) in nodes.ys.iter().zip(&nodes.fw) {
        value += f * (sol.lambda * (y - m)).ln_1p();
    }
    Ok((PointDivergence { value, lambda: Some(sol.lambda) }, sol))
}

/// `inf KL(q || f2)` over densities `q` with mean `m`, where `f2` is the
/// density sampled in `nodes`. The infimum is attained by the exponential
/// tilt `q*(y) proportional to f2(y) exp(-lambda y)` and equals
/// `-lambda m - log integral f2(y) exp(-lambda y) dy`.
pub fn exp_tilt_point(
    nodes: &DensityNodes,
    m: f64,
    cfg: &SolverConfig,
    warm: Option<f64>,
) -> Result<(PointDivergence, LambdaSolution)> {
    let sol = lambda::solve_exp_tilt(nodes, m, cfg, warm)?;
    if sol.lambda == 0.0 {
        return Ok((PointDivergence { value: 0.0, lambda: Some(0.0) }, sol));
    }
    let stats = lambda::exp_tilt_stats(nodes, sol.lambda);
    let value = -sol.lambda * m - stats.log_norm;
    Ok((PointDivergence { value, lambda: Some(sol.lambda) }, sol))
}

/// Closed form of [`exp_tilt_point`] for an (unbounded) Normal `f2` located
/// at `(e2, v2)`: the multiplier is `(e2 - m)/v2`, the tilted density is
/// `N(m, v2)`, and the value is `(m - e2)^2 / (2 v2)`.
pub fn exp_tilt_point_normal(m: f64, e2: f64, v2: f64) -> PointDivergence {
    let d = m - e2;
    PointDivergence { value: d * d / (2.0 * v2), lambda: Some((e2 - m) / v2) }
}

/// A density produced by reweighting a base density — the least-favorable
/// members delivered by the semi-parametric divergences.
#[derive(Debug, Clone, Copy)]
pub enum ReweightedDensity {
    /// `base(y) / (1 + lambda (y - m))`.
    Reciprocal { base: Density, m: f64, lambda: f64 },
    /// `base(y) exp(-lambda y - log_norm)`.
    Exponential { base: Density, lambda: f64, log_norm: f64 },
    /// An ordinary density (used where the tilt has a named closed form).
    Plain(Density),
}

impl ReweightedDensity {
    pub fn support(&self) -> (f64, f64) {
        match self {
            ReweightedDensity::Reciprocal { base, .. }
            | ReweightedDensity::Exponential { base, .. } => base.support(),
            ReweightedDensity::Plain(d) => d.support(),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            ReweightedDensity::Reciprocal { base, m, lambda } => {
                base.pdf(y) / (1.0 + lambda * (y - m))
            }
            ReweightedDensity::Exponential { base, lambda, log_norm } => {
                base.pdf(y) * (-lambda * y - log_norm).exp()
            }
            ReweightedDensity::Plain(d) => d.pdf(y),
        }
    }
}

/// The mean-`m` density attaining `inf KL(q || f1)`: the reciprocal tilt of
/// `f1`.
pub fn least_favorable_second(
    d1: &Density,
    m: f64,
    cfg: &SolverConfig,
) -> Result<ReweightedDensity> {
    let nodes = DensityNodes::from_density(d1)?;
    let sol = lambda::solve_reciprocal_tilt(&nodes, m, cfg, None)?;
    Ok(ReweightedDensity::Reciprocal { base: *d1, m, lambda: sol.lambda })
}

/// The mean-`m` density attaining `inf KL(q || f2)`: the exponential tilt
/// of `f2`. For a Normal `f2` this is exactly `N(m, v2)`.
pub fn least_favorable_first(
    fam2: &DensityFamily,
    e2: f64,
    v2: f64,
    m: f64,
    cfg: &SolverConfig,
) -> Result<ReweightedDensity> {
    let d2 = fam2.at(e2, v2)?;
    if let DensityKind::Normal = fam2.kind {
        return Ok(ReweightedDensity::Plain(
            DensityFamily { kind: DensityKind::Normal, variance: fam2.variance.clone() }
                .at(m, v2)?,
        ));
    }
    let nodes = DensityNodes::from_density(&d2)?;
    let sol = lambda::solve_exp_tilt(&nodes, m, cfg, None)?;
    let stats = lambda::exp_tilt_stats(&nodes, sol.lambda);
    Ok(ReweightedDensity::Exponential { base: d2, lambda: sol.lambda, log_norm: stats.log_norm })
}
