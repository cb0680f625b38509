//! Observation-error density families with a prescribed mean parameter.
//!
//! Each family maps a location value `eta` (a regression mean at some design
//! point) and a variance `v2` to a concrete density. Three kinds are
//! supported:
//!
//! * `Normal` — the unbounded Gaussian `N(eta, v2)`;
//! * `TruncatedNormal` — `N(eta, v2)` restricted to
//!   `[eta - c*sd, eta + c*sd]` with `sd = sqrt(v2)` and renormalised;
//! * `TruncatedLognormal` — a lognormal whose *untruncated* mean and
//!   variance are `eta` and `v2`, restricted between two of its quantiles
//!   and renormalised. The underlying Gaussian has
//!   `sigma^2 = log(1 + v2/eta^2)` and `mu = log(eta) - sigma^2/2`.
//!
//! Variances may be constants or expressions in `(x, theta)`.

use crate::error::{Error, Result};
use crate::expr::MeanFn;
use crate::normal;

/// A variance function: a positive constant or an expression evaluated at
/// `(x, theta)`.
#[derive(Debug, Clone)]
pub enum VarianceSpec {
    Const(f64),
    Expr(MeanFn),
}

impl VarianceSpec {
    /// Evaluates the variance at `(x, theta)`, rejecting non-positive or
    /// non-finite values.
    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64> {
        let v = match self {
            VarianceSpec::Const(v) => *v,
            VarianceSpec::Expr(f) => f.eval(x, theta),
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidVariance { x, value: v });
        }
        Ok(v)
    }
}

/// The distribution kind of a [`DensityFamily`].
#[derive(Debug, Clone, PartialEq)]
pub enum DensityKind {
    Normal,
    /// Truncation at `half_width` standard deviations either side of the
    /// mean.
    TruncatedNormal {
        half_width: f64,
    },
    /// Truncation at the given lower/upper quantiles of the untruncated
    /// lognormal.
    TruncatedLognormal {
        q_lo: f64,
        q_hi: f64,
    },
}

/// A density family: a kind plus its variance function.
#[derive(Debug, Clone)]
pub struct DensityFamily {
    pub kind: DensityKind,
    pub variance: VarianceSpec,
}

impl DensityFamily {
    /// Validates the kind's fixed parameters.
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            DensityKind::Normal => Ok(()),
            DensityKind::TruncatedNormal { half_width } => {
                if !(*half_width > 0.0) || !half_width.is_finite() {
                    return Err(Error::Domain(format!(
                        "truncation half-width must be positive: {half_width}"
                    )));
                }
                Ok(())
            }
            DensityKind::TruncatedLognormal { q_lo, q_hi } => {
                if !(*q_lo > 0.0 && *q_hi < 1.0 && q_lo < q_hi) {
                    return Err(Error::Domain(format!(
                        "truncation quantiles must satisfy 0 < q_lo < q_hi < 1: ({q_lo}, {q_hi})"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether the family's support is bounded.
    pub fn is_bounded(&self) -> bool {
        !matches!(self.kind, DensityKind::Normal)
    }

    /// Instantiates the density at a concrete `(eta, v2)`.
    pub fn at(&self, eta: f64, v2: f64) -> Result<Density> {
        if !(v2 > 0.0) || !v2.is_finite() {
            return Err(Error::Domain(format!("variance must be positive: {v2}")));
        }
        if !eta.is_finite() {
            return Err(Error::Domain(format!("mean must be finite: {eta}")));
        }
        let sd = v2.sqrt();
        match &self.kind {
            DensityKind::Normal => Ok(Density::Normal { eta, sd }),
            DensityKind::TruncatedNormal { half_width } => {
                let c = *half_width;
                let mass = normal::cdf(c) - normal::cdf(-c);
                Ok(Density::TruncatedNormal {
                    eta,
                    sd,
                    lo: eta - c * sd,
                    hi: eta + c * sd,
                    inv_norm: 1.0 / (sd * mass),
                })
            }
            DensityKind::TruncatedLognormal { q_lo, q_hi } => {
                if !(eta > 0.0) {
                    return Err(Error::Domain(format!(
                        "truncated-lognormal mean must be positive: {eta}"
                    )));
                }
                let sigma2 = (1.0 + v2 / (eta * eta)).ln();
                let sigma = sigma2.sqrt();
                let mu = eta.ln() - 0.5 * sigma2;
                let z_lo = normal::quantile(*q_lo)?;
                let z_hi = normal::quantile(*q_hi)?;
                Ok(Density::TruncatedLognormal {
                    mu,
                    sigma,
                    lo: (mu + sigma * z_lo).exp(),
                    hi: (mu + sigma * z_hi).exp(),
                    inv_mass: 1.0 / (q_hi - q_lo),
                })
            }
        }
    }
}

/// A density instantiated at a concrete mean and variance; `pdf` is cheap.
#[derive(Debug, Clone, Copy)]
pub enum Density {
    Normal { eta: f64, sd: f64 },
    TruncatedNormal { eta: f64, sd: f64, lo: f64, hi: f64, inv_norm: f64 },
    TruncatedLognormal { mu: f64, sigma: f64, lo: f64, hi: f64, inv_mass: f64 },
}

impl Density {
    /// Support as `(lo, hi)`; infinite for the Normal kind.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Density::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Density::TruncatedNormal { lo, hi, .. } => (*lo, *hi),
            Density::TruncatedLognormal { lo, hi, .. } => (*lo, *hi),
        }
    }

    /// Density value at `y` (zero outside the support).
    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            Density::Normal { eta, sd } => normal::pdf((y - eta) / sd) / sd,
            Density::TruncatedNormal { eta, sd, lo, hi, inv_norm } => {
                if y < *lo || y > *hi {
                    0.0
                } else {
                    normal::pdf((y - eta) / sd) * inv_norm
                }
            }
            Density::TruncatedLognormal { mu, sigma, lo, hi, inv_mass } => {
                if y < *lo || y > *hi || y <= 0.0 {
                    0.0
                } else {
                    normal::pdf((y.ln() - mu) / sigma) / (y * sigma) * inv_mass
                }
            }
        }
    }

    /// Natural-log density at `y`; `-inf` outside the support.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        match self {
            Density::Normal { eta, sd } => {
                let z = (y - eta) / sd;
                -0.5 * z * z - sd.ln() - 0.918_938_533_204_672_7 // log sqrt(2 pi)
            }
            _ => {
                let p = self.pdf(y);
                p.ln()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;

    fn tn(half_width: f64, v2: f64) -> DensityFamily {
        DensityFamily {
            kind: DensityKind::TruncatedNormal { half_width },
            variance: VarianceSpec::Const(v2),
        }
    }

    fn tln(v2: f64) -> DensityFamily {
        DensityFamily {
            kind: DensityKind::TruncatedLognormal { q_lo: 1e-4, q_hi: 0.9999 },
            variance: VarianceSpec::Const(v2),
        }
    }

    #[test]
    fn truncated_normal_reference_values() {
        let d = tn(3.0, 1.0).at(0.0, 1.0).unwrap();
        assert_eq!(d.support(), (-3.0, 3.0));
        // Central density = phi(0) / (Phi(3) - Phi(-3)); the mass is
        // 0.9973002039367398 to full precision.
        assert!((d.pdf(0.0) - 0.40002225892128485).abs() < 1e-15);
        assert_eq!(d.pdf(3.2), 0.0);
        assert_eq!(d.pdf(-3.0000001), 0.0);
        // Shift/scale equivariance.
        let d2 = tn(3.0, 4.0).at(5.0, 4.0).unwrap();
        assert_eq!(d2.support(), (-1.0, 11.0));
        assert!((d2.pdf(5.0) - 0.40002225892128485 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_lognormal_reference_values() {
        let d = tln(0.1).at(1.0, 0.1).unwrap();
        let (lo, hi) = d.support();
        assert!((lo - 0.3024610538189037).abs() < 1e-12, "lo = {lo}");
        assert!((hi - 3.005646173656554).abs() < 1e-11, "hi = {hi}");
        match d {
            Density::TruncatedLognormal { mu, sigma, .. } => {
                assert!((mu - -0.04765508990216247).abs() < 1e-15);
                assert!((sigma * sigma - 0.09531017980432493).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn densities_normalise_to_one() {
        for (fam, eta, v2) in [
            (tn(3.0, 1.0), 0.0, 1.0),
            (tn(2.5, 0.3), -4.0, 0.3),
            (tln(0.1), 1.0, 0.1),
            (tln(0.02), 2.7, 0.02),
        ] {
            let d = fam.at(eta, v2).unwrap();
            let (lo, hi) = d.support();
            let r = quad::integrate(|y| d.pdf(y), lo, hi, 1e-12).unwrap();
            assert!((r.value - 1.0).abs() < 1e-10, "mass = {}", r.value);
        }
        // Normal over a wide window.
        let d = DensityFamily { kind: DensityKind::Normal, variance: VarianceSpec::Const(0.5) }
            .at(1.0, 0.5)
            .unwrap();
        let r = quad::integrate(|y| d.pdf(y), -9.0, 11.0, 1e-12).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn untruncated_lognormal_moments_match_eta_v2() {
        // The family is parameterised so that before truncation the mean is
        // eta and the variance v2; integrate over a generous window of the
        // untruncated density to confirm.
        let d = DensityFamily {
            kind: DensityKind::TruncatedLognormal { q_lo: 1e-12, q_hi: 1.0 - 1e-12 },
            variance: VarianceSpec::Const(0.1),
        }
        .at(1.0, 0.1)
        .unwrap();
        let (lo, hi) = d.support();
        let mean = quad::integrate(|y| y * d.pdf(y), lo, hi, 1e-12).unwrap().value;
        let m2 = quad::integrate(|y| y * y * d.pdf(y), lo, hi, 1e-12).unwrap().value;
        assert!((mean - 1.0).abs() < 1e-9, "mean = {mean}");
        assert!((m2 - mean * mean - 0.1).abs() < 1e-9, "var = {}", m2 - mean * mean);
    }

    #[test]
    fn variance_spec_validation() {
        let v = VarianceSpec::Const(0.1);
        assert_eq!(v.eval(0.0, &[]).unwrap(), 0.1);
        assert!(VarianceSpec::Const(0.0).eval(1.0, &[]).is_err());
        assert!(VarianceSpec::Const(-1.0).eval(1.0, &[]).is_err());
        let v = VarianceSpec::Expr(MeanFn::parse("p1*x").unwrap());
        assert_eq!(v.eval(2.0, &[0.3]).unwrap(), 0.6);
        match v.eval(-2.0, &[0.3]) {
            Err(Error::InvalidVariance { x, value }) => {
                assert_eq!(x, -2.0);
                assert_eq!(value, -0.6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn family_parameter_validation() {
        assert!(tn(-1.0, 1.0).validate().is_err());
        assert!(DensityFamily {
            kind: DensityKind::TruncatedLognormal { q_lo: 0.5, q_hi: 0.4 },
            variance: VarianceSpec::Const(1.0)
        }
        .validate()
        .is_err());
        assert!(tln(0.1).at(-1.0, 0.1).is_err()); // negative lognormal mean
        assert!(tn(3.0, 1.0).at(0.0, -1.0).is_err());
    }
}
