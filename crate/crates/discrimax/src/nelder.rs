//! Nelder–Mead simplex minimisation over a box, used by the inner
//! (worst-case parameter) minimisation.
//!
//! Proposed vertices are clamped to the box, which for these objectives is
//! a safe projection: the penalty terms grow away from the feasible region,
//! so minimisers do not stick artificially to the clamped faces unless the
//! true minimiser lies on the boundary.

/// Stopping rules and budget.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOpts {
    pub max_evals: usize,
    /// Converged when every vertex is within this distance of the best.
    pub diam_tol: f64,
    /// ... and the spread of objective values is below this.
    pub f_tol: f64,
    /// Initial simplex edge, as a fraction of each coordinate's range.
    pub init_step_rel: f64,
}

impl Default for NelderMeadOpts {
    fn default() -> Self {
        NelderMeadOpts { max_evals: 4000, diam_tol: 1e-9, f_tol: 1e-12, init_step_rel: 0.05 }
    }
}

/// Result of one local search.
#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    /// Objective evaluations spent; a budget diagnostic, not consumed by
    /// the optimiser itself.
    #[allow(dead_code)]
    pub evals: usize,
}

fn clamp(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Minimises `f` from `x0` within `bounds`.
pub fn minimize(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    bounds: &[(f64, f64)],
    opts: &NelderMeadOpts,
) -> NelderMeadResult {
    let n = x0.len();
    assert_eq!(n, bounds.len(), "dimension mismatch");
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    // Initial simplex: x0 plus a step along each axis (flipped away from a
    // touching bound).
    let mut verts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start, bounds);
    verts.push(start.clone());
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let h = opts.init_step_rel * (hi - lo);
        let mut v = start.clone();
        v[i] = if v[i] + h <= hi { v[i] + h } else { v[i] - h };
        clamp(&mut v, bounds);
        verts.push(v);
    }
    let mut vals: Vec<f64> = verts.iter().map(|v| eval(v)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    while evals.get() < opts.max_evals {
        // Order vertices by value.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
        let ordered: Vec<Vec<f64>> = idx.iter().map(|&i| verts[i].clone()).collect();
        let ordered_vals: Vec<f64> = idx.iter().map(|&i| vals[i]).collect();
        verts = ordered;
        vals = ordered_vals;

        // Convergence: simplex diameter and value spread.
        let mut diam = 0.0f64;
        for v in &verts[1..] {
            for (a, b) in v.iter().zip(&verts[0]) {
                diam = diam.max((a - b).abs());
            }
        }
        let spread = vals[n] - vals[0];
        if diam < opts.diam_tol && spread.abs() < opts.f_tol {
            converged = true;
            break;
        }

        // Centroid of all but the worst.
        let mut cen = vec![0.0; n];
        for v in &verts[..n] {
            for (c, &vi) in cen.iter_mut().zip(v) {
                *c += vi;
            }
        }
        for c in cen.iter_mut() {
            *c /= n as f64;
        }

        // Reflection.
        let mut xr: Vec<f64> =
            cen.iter().zip(&verts[n]).map(|(&c, &w)| c + alpha * (c - w)).collect();
        clamp(&mut xr, bounds);
        let fr = eval(&xr);
        if fr < vals[0] {
            // Expansion.
            let mut xe: Vec<f64> =
                cen.iter().zip(&verts[n]).map(|(&c, &w)| c + gamma * alpha * (c - w)).collect();
            clamp(&mut xe, bounds);
            let fe = eval(&xe);
            if fe < fr {
                verts[n] = xe;
                vals[n] = fe;
            } else {
                verts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            verts[n] = xr;
            vals[n] = fr;
            continue;
        }
        // Contraction (outside if the reflection improved on the worst,
        // inside otherwise).
        let (mut xc, towards): (Vec<f64>, f64) = if fr < vals[n] {
            (cen.iter().zip(&xr).map(|(&c, &r)| c + rho * (r - c)).collect(), fr)
        } else {
            (cen.iter().zip(&verts[n]).map(|(&c, &w)| c + rho * (w - c)).collect(), vals[n])
        };
        clamp(&mut xc, bounds);
        let fc = eval(&xc);
        if fc < towards {
            verts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=n {
            let vi: Vec<f64> =
                verts[0].iter().zip(&verts[i]).map(|(&b, &v)| b + sigma * (v - b)).collect();
            verts[i] = vi;
            vals[i] = eval(&verts[i]);
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    NelderMeadResult { x: verts[best].clone(), value: vals[best], converged, evals: evals.get() }
}

/// Golden-section search for the maximum of `h` on `[a, b]`.
pub fn golden_max(mut h: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut hc = h(c);
    let mut hd = h(d);
    while b - a > tol {
        if hc >= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            hc = h(c);
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            hd = h(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_concave_maximum() {
        let x = golden_max(|u| -(u - 0.3).powi(2), -1.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-9);
    }

    #[test]
    fn minimises_quadratic_bowl() {
        let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 1.2).powi(2);
        let r = minimize(
            &mut f,
            &[5.0, 5.0],
            &[(-10.0, 10.0), (-10.0, 10.0)],
            &NelderMeadOpts::default(),
        );
        assert!(r.converged);
        assert!((r.x[0] - 0.3).abs() < 1e-7, "x = {:?}", r.x);
        assert!((r.x[1] + 1.2).abs() < 1e-7);
        assert!(r.value < 1e-13);
        assert!(r.evals > 0 && r.evals <= NelderMeadOpts::default().max_evals);
    }

    #[test]
    fn respects_bounds() {
        // Unconstrained minimum at (-2, 0) lies outside the box.
        let mut f = |x: &[f64]| (x[0] + 2.0).powi(2) + x[1] * x[1];
        let r =
            minimize(&mut f, &[0.5, 0.5], &[(0.0, 1.0), (0.0, 1.0)], &NelderMeadOpts::default());
        assert!(r.x[0] >= 0.0 && r.x[0] <= 1e-6, "x = {:?}", r.x);
    }

    #[test]
    fn handles_rosenbrock() {
        let mut f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = minimize(
            &mut f,
            &[-1.2, 1.0],
            &[(-5.0, 5.0), (-5.0, 5.0)],
            &NelderMeadOpts { max_evals: 10_000, ..Default::default() },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "x = {:?}", r.x);
    }

    #[test]
    fn nan_objective_is_treated_as_infinite() {
        let mut f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { x[0] * x[0] };
        let r = minimize(&mut f, &[2.0], &[(-5.0, 5.0)], &NelderMeadOpts::default());
        assert!(r.x[0].abs() < 1e-6, "x = {:?}", r.x);
    }
}
