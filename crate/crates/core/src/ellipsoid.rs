//! Central-cut ellipsoid method with deep cuts and a certified lower bound.
//!
//! If the minimizer lies in the initial ellipsoid, every objective cut
//! `f(z*) >= f(c) + s^T (z* - c) >= f(c) - sqrt(s^T P s)` is a valid lower
//! bound, so the method stops on a provable gap.

use nalgebra::{DMatrix, DVector};

pub(crate) enum Cut {
    /// Objective value and a subgradient at the center.
    Objective { value: f64, subgradient: Vec<f64> },
    /// Feasible points satisfy `normal^T (z - c) <= -depth`, `depth >= 0`.
    Feasibility { normal: Vec<f64>, depth: f64 },
}

#[derive(Clone, Debug)]
pub(crate) struct EllipsoidOutcome {
    pub z: Vec<f64>,
    pub value: f64,
    pub lower: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes over the axis-aligned ellipsoid `sum_i ((z_i - c_i) / r_i)^2 <= 1`.
pub(crate) fn minimize<F, T>(center: Vec<f64>, radii: &[f64], max_iter: usize, tol: T, mut oracle: F) -> EllipsoidOutcome
where
    F: FnMut(&[f64]) -> Cut,
    T: Fn(f64) -> f64,
{
    let n = center.len();
    let mut c = DVector::from_vec(center);
    let mut p = DMatrix::from_diagonal(&DVector::from_iterator(n, radii.iter().map(|r| r * r)));
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut lower = f64::NEG_INFINITY;
    let nf = n as f64;

    for it in 0..max_iter {
        let (s, depth, is_obj) = match oracle(c.as_slice()) {
            Cut::Objective { value, subgradient } => {
                if best.as_ref().is_none_or(|b| value < b.1) {
                    best = Some((c.as_slice().to_vec(), value));
                }
                let s = DVector::from_vec(subgradient);
                let sps = s.dot(&(&p * &s)).max(0.0);
                lower = lower.max(value - sps.sqrt());
                let fb = best.as_ref().map(|b| b.1).unwrap();
                if sps == 0.0 || fb - lower <= tol(fb) {
                    let (z, value) = best.unwrap();
                    return EllipsoidOutcome {
                        z,
                        value,
                        lower: lower.min(value),
                        iterations: it + 1,
                        converged: true,
                    };
                }
                (s, value - fb, true)
            }
            Cut::Feasibility { normal, depth } => (DVector::from_vec(normal), depth.max(0.0), false),
        };
        let ps = &p * &s;
        let sps = s.dot(&ps);
        if !(sps > 0.0) || !sps.is_finite() {
            break;
        }
        let root = sps.sqrt();
        let a = depth / root;
        if a >= 1.0 {
            if is_obj {
                // Every point of the ellipsoid is at least as bad as the best.
                lower = lower.max(best.as_ref().unwrap().1);
            }
            break;
        }
        let b = ps / root;
        if n == 1 {
            // Interval update.
            let w = p[(0, 0)].sqrt();
            let dir = b[0].signum();
            let (lo, hi) = (c[0] - w, c[0] + w);
            let (lo, hi) = if dir > 0.0 { (lo, c[0] - a * w) } else { (c[0] + a * w, hi) };
            c[0] = 0.5 * (lo + hi);
            p[(0, 0)] = (0.5 * (hi - lo)).powi(2);
        } else {
            c -= &b * ((1.0 + nf * a) / (nf + 1.0));
            let shrink = nf * nf / (nf * nf - 1.0) * (1.0 - a * a);
            let k = 2.0 * (1.0 + nf * a) / ((nf + 1.0) * (1.0 + a));
            p = (&p - (&b * b.transpose()) * k) * shrink;
            p = (&p + p.transpose()) * 0.5;
        }
    }
    match best {
        Some((z, value)) => EllipsoidOutcome {
            z,
            value,
            lower: lower.min(value),
            iterations: max_iter,
            converged: value - lower <= tol(value),
        },
        None => EllipsoidOutcome {
            z: c.as_slice().to_vec(),
            value: f64::INFINITY,
            lower,
            iterations: max_iter,
            converged: false,
        },
    }
}
