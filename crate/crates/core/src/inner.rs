//! Smooth concave maximization over products of signal sets.
//!
//! Projected gradient ascent with Barzilai-Borwein steps and backtracking.
//! V-polytope blocks are optimized over their convex weights, so every
//! projection is exact. Termination is on the Frank-Wolfe gap
//! `max_{z in X} grad f(x)^T (z - x)`, which for a concave `f` also gives the
//! certified upper bound `max f <= f(x) + gap`.

use crate::families::dot;
use crate::sets::{combine, project_simplex, SignalSet};

#[derive(Clone, Copy, Debug)]
pub struct InnerOptions {
    /// Stop when the Frank-Wolfe gap is below `tol * (1 + |f|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    /// Maximizer, concatenated over blocks.
    pub x: Vec<f64>,
    pub value: f64,
    /// Frank-Wolfe gap at `x`; `value + gap` bounds the maximum from above.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl InnerResult {
    pub fn upper(&self) -> f64 {
        self.value + self.gap
    }
}

/// Optimization variable of one block: the point itself, or convex weights
/// over polytope vertices.
enum Block<'a> {
    Direct(&'a SignalSet),
    Weights(&'a [Vec<f64>]),
}

impl Block<'_> {
    fn var_dim(&self) -> usize {
        match self {
            Block::Direct(s) => s.dim(),
            Block::Weights(v) => v.len(),
        }
    }

    fn point_dim(&self) -> usize {
        match self {
            Block::Direct(s) => s.dim(),
            Block::Weights(v) => v[0].len(),
        }
    }

    fn to_point(&self, var: &[f64]) -> Vec<f64> {
        match self {
            Block::Direct(_) => var.to_vec(),
            Block::Weights(v) => combine(v, var),
        }
    }

    fn pull_back(&self, grad_point: &[f64]) -> Vec<f64> {
        match self {
            Block::Direct(_) => grad_point.to_vec(),
            Block::Weights(v) => v.iter().map(|p| dot(p, grad_point)).collect(),
        }
    }

    fn project(&self, var: &[f64]) -> Vec<f64> {
        match self {
            Block::Direct(s) => s.project_raw(var),
            Block::Weights(_) => project_simplex(var, 1.0),
        }
    }

    /// `max_{z} c^T z` over the block's variable domain.
    fn lin_max_value(&self, c: &[f64]) -> f64 {
        match self {
            Block::Direct(s) => s.lin_max_raw(c).value,
            Block::Weights(_) => c.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
        }
    }

    fn initial_var(&self, point: &[f64]) -> Vec<f64> {
        match self {
            Block::Direct(s) => s.project_raw(point),
            Block::Weights(v) => crate::sets::hull_projection_weights(v, point),
        }
    }
}

fn blocks<'a>(sets: &[&'a SignalSet]) -> Vec<Block<'a>> {
    sets.iter()
        .map(|s| match s {
            SignalSet::VPolytope { vertices } if vertices.len() > 1 => Block::Weights(vertices),
            other => Block::Direct(other),
        })
        .collect()
}

struct Layout<'a> {
    blocks: Vec<Block<'a>>,
}

impl Layout<'_> {
    fn to_point(&self, var: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut off = 0;
        for b in &self.blocks {
            let d = b.var_dim();
            out.extend(b.to_point(&var[off..off + d]));
            off += d;
        }
        out
    }

    fn pull_back(&self, grad: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut off = 0;
        for b in &self.blocks {
            let d = b.point_dim();
            out.extend(b.pull_back(&grad[off..off + d]));
            off += d;
        }
        out
    }

    fn project(&self, var: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(var.len());
        let mut off = 0;
        for b in &self.blocks {
            let d = b.var_dim();
            out.extend(b.project(&var[off..off + d]));
            off += d;
        }
        out
    }

    fn fw_gap(&self, var: &[f64], grad: &[f64]) -> f64 {
        let mut gap = 0.0;
        let mut off = 0;
        for b in &self.blocks {
            let d = b.var_dim();
            let g = &grad[off..off + d];
            gap += b.lin_max_value(g) - dot(g, &var[off..off + d]);
            off += d;
        }
        gap.max(0.0)
    }

    fn initial(&self, x0: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        let mut off = 0;
        for b in &self.blocks {
            let d = b.point_dim();
            out.extend(b.initial_var(&x0[off..off + d]));
            off += d;
        }
        out
    }
}

/// Maximizes a smooth concave `f` over `sets[0] x sets[1] x ...`.
///
/// `f` returns the value and the gradient at a point (concatenated over
/// blocks). Non-finite values are treated as outside the domain and the step
/// is shortened.
pub fn maximize_concave<F>(sets: &[&SignalSet], x0: &[f64], opts: InnerOptions, mut f: F) -> InnerResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let layout = Layout { blocks: blocks(sets) };
    let mut eval = |var: &[f64]| {
        let x = layout.to_point(var);
        let (v, g) = f(&x);
        (v, layout.pull_back(&g))
    };

    let mut var = layout.initial(x0);
    let (mut fv, mut grad) = eval(&var);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gap = layout.fw_gap(&var, &grad);

    while iterations < opts.max_iter {
        if gap <= opts.tol * (1.0 + fv.abs()) {
            return InnerResult {
                x: layout.to_point(&var),
                value: fv,
                gap,
                iterations,
                converged: true,
            };
        }
        iterations += 1;

        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = var.iter().zip(&grad).map(|(v, g)| v + step * g).collect();
            let cand = layout.project(&trial);
            let d: Vec<f64> = cand.iter().zip(&var).map(|(a, b)| a - b).collect();
            let dd = dot(&d, &d);
            if dd == 0.0 {
                accepted = Some((cand, fv, grad.clone(), d));
                break;
            }
            let (fc, gc) = eval(&cand);
            if fc.is_finite() && fc >= fv + dot(&grad, &d) - dd / (2.0 * step) - 1e-15 * fv.abs() {
                accepted = Some((cand, fc, gc, d));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc, d)) = accepted else {
            break;
        };
        let y: Vec<f64> = gc.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&d, &y);
        let ss = dot(&d, &d);
        step = if sy < 0.0 && ss > 0.0 {
            (ss / -sy).clamp(1e-12, 1e12)
        } else {
            (step * 4.0).min(1e12)
        };
        let stalled = ss == 0.0;
        var = cand;
        fv = fc;
        grad = gc;
        gap = layout.fw_gap(&var, &grad);
        if stalled && gap > opts.tol * (1.0 + fv.abs()) {
            // Projection fixed point but positive gap: only possible when the
            // step is too small to move; enlarge it.
            step = (step * 16.0).min(1e12);
        }
    }

    let converged = gap <= opts.tol * (1.0 + fv.abs());
    InnerResult {
        x: layout.to_point(&var),
        value: fv,
        gap,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn box_quadratic_with_active_bound() {
        // max -(x-2)^2 - (y+0.5)^2 over [0,1]^2 -> (1, 0)
        let b = SignalSet::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let r = maximize_concave(&[&b], &[0.5, 0.5], InnerOptions::default(), |x| {
            let v = -(x[0] - 2.0).powi(2) - (x[1] + 0.5).powi(2);
            (v, vec![-2.0 * (x[0] - 2.0), -2.0 * (x[1] + 0.5)])
        });
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.value, -1.25, epsilon = 1e-9);
    }

    #[test]
    fn linear_objective_reaches_vertex() {
        let b = SignalSet::boxed(vec![-1.0, -2.0], vec![3.0, 2.0]).unwrap();
        let r = maximize_concave(&[&b], &[0.0, 0.0], InnerOptions::default(), |x| {
            (x[0] - 2.0 * x[1], vec![1.0, -2.0])
        });
        assert!(r.converged);
        assert_eq!(r.x, vec![3.0, -2.0]);
    }

    #[test]
    fn polytope_block_in_weight_space() {
        let v = SignalSet::vpolytope(vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        // max -|x - (2,2)|^2 over triangle -> (1,1)
        let r = maximize_concave(&[&v], &[0.0, 0.0], InnerOptions::default(), |x| {
            let v = -(x[0] - 2.0).powi(2) - (x[1] - 2.0).powi(2);
            (v, vec![-2.0 * (x[0] - 2.0), -2.0 * (x[1] - 2.0)])
        });
        assert!(r.converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn upper_bound_dominates_value() {
        let b = SignalSet::interval(0.0, 1.0).unwrap();
        let opts = InnerOptions { tol: 1e-3, max_iter: 3 };
        let r = maximize_concave(&[&b], &[0.0], opts, |x| {
            (-(x[0] - 0.3).powi(2), vec![-2.0 * (x[0] - 0.3)])
        });
        assert!(r.upper() >= 0.0 - 1e-15);
    }
}
