//! Standard-normal special functions: `erf`/`erfc`, density, CDF, and the
//! quantile function.
//!
//! `erf` uses its Maclaurin series for `|x| <= 2` and a continued fraction
//! (evaluated by the modified Lentz algorithm) for the complementary
//! function beyond, giving close to machine precision everywhere. The
//! quantile starts from a rational approximation and applies one Newton
//! step on the CDF, which leaves an error far below the 1e-9 target.

use crate::error::{Error, Result};

const FRAC_2_SQRT_PI: f64 = 1.128_379_167_095_512_6; // 2 / sqrt(pi)
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7; // 1 / sqrt(2 pi)

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let a = x.abs();
    if a <= 2.0 {
        erf_series(x)
    } else if x > 0.0 {
        1.0 - erfc_cf(a)
    } else {
        erfc_cf(a) - 1.0
    }
}

/// Complementary error function, accurate into the far tail.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.abs() <= 2.0 {
        1.0 - erf_series(x)
    } else if x > 0.0 {
        erfc_cf(x)
    } else {
        2.0 - erfc_cf(-x)
    }
}

/// Maclaurin series, converges rapidly for |x| <= 2.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        let nf = n as f64;
        term *= -x2 / nf;
        let add = term / (2.0 * nf + 1.0);
        sum += add;
        if add.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * sum
}

/// Continued fraction for erfc(x), x > 0:
/// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))),
/// evaluated bottom-up free of cancellation via modified Lentz.
fn erfc_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = if x == 0.0 { TINY } else { x };
    let mut c = f;
    let mut d = 0.0;
    for n in 1..300 {
        let a = n as f64 / 2.0;
        // Continued fraction step with partial numerator a, denominator x.
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Standard-normal density.
pub fn pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard-normal CDF.
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard-normal quantile (inverse CDF) for `p` in the open unit interval.
///
/// Rational initial approximation followed by one Newton correction on the
/// CDF; the absolute error is bounded well below 1e-9 over the full range.
pub fn quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0, 1): got {p}")));
    }
    // Work in the lower tail, where cdf carries full relative precision, so
    // the Newton correction does not cancel; 1 - p is exact for p >= 0.5.
    if p > 0.5 {
        return Ok(-quantile_lower(1.0 - p));
    }
    Ok(quantile_lower(p))
}

/// Quantile for `p` in `(0, 0.5]`: rational initial approximation plus one
/// Newton correction on the CDF. In the far tails the density underflows
/// only past `|x| ~ 38`, far outside f64 probabilities.
fn quantile_lower(p: f64) -> f64 {
    let x = quantile_approx(p);
    x - (cdf(x) - p) / pdf(x)
}

/// Rational approximation, |error| < 1.2e-8 over (0, 1).
fn quantile_approx(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
