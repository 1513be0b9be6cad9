//! Convex compact signal sets with linear-maximization and projection oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::families::dot;

const PROJECTION_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SignalSet {
    /// `[lo, hi]` in R^1.
    Interval { lo: f64, hi: f64 },
    /// Axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{x : x_i >= margin, sum_i x_i = scale}` in R^dim.
    Simplex {
        dim: usize,
        scale: f64,
        #[serde(default)]
        margin: f64,
    },
    /// Convex hull of finitely many points.
    #[serde(rename = "vpolytope")]
    VPolytope { vertices: Vec<Vec<f64>> },
}

/// Result of a linear maximization.
#[derive(Clone, Debug, PartialEq)]
pub struct LinMax {
    pub point: Vec<f64>,
    pub value: f64,
}

impl SignalSet {
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        let s = SignalSet::Interval { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = SignalSet::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn simplex(dim: usize, scale: f64, margin: f64) -> Result<Self> {
        let s = SignalSet::Simplex { dim, scale, margin };
        s.validate()?;
        Ok(s)
    }

    pub fn vpolytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let s = SignalSet::VPolytope { vertices };
        s.validate()?;
        Ok(s)
    }

    /// Single point `{x0}`.
    pub fn singleton(x0: Vec<f64>) -> Self {
        SignalSet::VPolytope {
            vertices: vec![x0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            SignalSet::Interval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidInput(format!(
                        "interval needs finite lo <= hi, got [{lo}, {hi}]"
                    )));
                }
            }
            SignalSet::Box { lo, hi } => {
                check_dim("box upper bounds", lo.len(), hi.len())?;
                if lo.is_empty() || !finite(lo) || !finite(hi) {
                    return Err(Error::InvalidInput("box bounds must be finite and nonempty".into()));
                }
                if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
                    return Err(Error::InvalidInput(format!(
                        "box coordinate {i} has lo {} > hi {}",
                        lo[i], hi[i]
                    )));
                }
            }
            SignalSet::Simplex { dim, scale, margin } => {
                if *dim == 0 || !(*scale > 0.0) || !(*margin >= 0.0) {
                    return Err(Error::InvalidInput(
                        "simplex needs dim >= 1, scale > 0 and margin >= 0".into(),
                    ));
                }
                if *margin * *dim as f64 > *scale {
                    return Err(Error::InvalidInput(format!(
                        "simplex margin {margin} leaves an empty set for scale {scale}"
                    )));
                }
            }
            SignalSet::VPolytope { vertices } => {
                let first = vertices
                    .first()
                    .ok_or_else(|| Error::InvalidInput("polytope needs at least one vertex".into()))?;
                if first.is_empty() {
                    return Err(Error::InvalidInput("polytope vertices must be nonempty".into()));
                }
                for v in vertices {
                    check_dim("polytope vertex", first.len(), v.len())?;
                    if !finite(v) {
                        return Err(Error::InvalidInput("polytope vertex is not finite".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SignalSet::Interval { .. } => 1,
            SignalSet::Box { lo, .. } => lo.len(),
            SignalSet::Simplex { dim, .. } => *dim,
            SignalSet::VPolytope { vertices } => vertices[0].len(),
        }
    }

    /// `argmax_{x in X} c^T x`, ties broken towards the lowest index.
    pub fn lin_max(&self, c: &[f64]) -> Result<LinMax> {
        check_dim("linear objective", self.dim(), c.len())?;
        Ok(self.lin_max_raw(c))
    }

    pub(crate) fn lin_max_raw(&self, c: &[f64]) -> LinMax {
        match self {
            SignalSet::Interval { lo, hi } => {
                let x = if c[0] > 0.0 { *hi } else { *lo };
                LinMax {
                    point: vec![x],
                    value: c[0] * x,
                }
            }
            SignalSet::Box { lo, hi } => {
                let point: Vec<f64> = c
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(&ci, (&l, &h))| if ci > 0.0 { h } else { l })
                    .collect();
                LinMax {
                    value: dot(c, &point),
                    point,
                }
            }
            SignalSet::Simplex { dim, scale, margin } => {
                let best = argmax_lowest(c);
                let mut point = vec![*margin; *dim];
                point[best] += scale - margin * *dim as f64;
                LinMax {
                    value: dot(c, &point),
                    point,
                }
            }
            SignalSet::VPolytope { vertices } => {
                let values: Vec<f64> = vertices.iter().map(|v| dot(c, v)).collect();
                let best = argmax_lowest(&values);
                LinMax {
                    point: vertices[best].clone(),
                    value: values[best],
                }
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim("point", self.dim(), z.len())?;
        Ok(self.project_raw(z))
    }

    pub(crate) fn project_raw(&self, z: &[f64]) -> Vec<f64> {
        match self {
            SignalSet::Interval { lo, hi } => vec![z[0].clamp(*lo, *hi)],
            SignalSet::Box { lo, hi } => z
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| v.clamp(l, h))
                .collect(),
            SignalSet::Simplex { dim, scale, margin } => {
                let shifted: Vec<f64> = z.iter().map(|v| v - margin).collect();
                project_simplex(&shifted, scale - margin * *dim as f64)
                    .into_iter()
                    .map(|v| v + margin)
                    .collect()
            }
            SignalSet::VPolytope { vertices } => {
                let w = hull_projection_weights(vertices, z);
                combine(vertices, &w)
            }
        }
    }

    /// Membership up to an absolute tolerance.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            SignalSet::Interval { lo, hi } => x[0] >= lo - tol && x[0] <= hi + tol,
            SignalSet::Box { lo, hi } => (0..x.len()).all(|i| x[i] >= lo[i] - tol && x[i] <= hi[i] + tol),
            SignalSet::Simplex { scale, margin, .. } => {
                x.iter().all(|&v| v >= margin - tol) && (x.iter().sum::<f64>() - scale).abs() <= tol
            }
            SignalSet::VPolytope { .. } => {
                let p = self.project_raw(x);
                dist(&p, x) <= tol
            }
        }
    }

    /// Extreme points (all `2^n` corners for boxes).
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        match self {
            SignalSet::Interval { lo, hi } => {
                if lo == hi {
                    vec![vec![*lo]]
                } else {
                    vec![vec![*lo], vec![*hi]]
                }
            }
            SignalSet::Box { lo, hi } => {
                let n = lo.len();
                (0..1usize << n)
                    .map(|mask| {
                        (0..n)
                            .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                            .collect()
                    })
                    .collect()
            }
            SignalSet::Simplex { dim, scale, margin } => (0..*dim)
                .map(|i| {
                    let mut v = vec![*margin; *dim];
                    v[i] += scale - margin * *dim as f64;
                    v
                })
                .collect(),
            SignalSet::VPolytope { vertices } => vertices.clone(),
        }
    }

    /// A point of the set: its center of mass for boxes and simplices, the
    /// vertex average for polytopes.
    pub fn center(&self) -> Vec<f64> {
        match self {
            SignalSet::Interval { lo, hi } => vec![0.5 * (lo + hi)],
            SignalSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            SignalSet::Simplex { dim, scale, .. } => vec![scale / *dim as f64; *dim],
            SignalSet::VPolytope { vertices } => {
                let w = vec![1.0 / vertices.len() as f64; vertices.len()];
                combine(vertices, &w)
            }
        }
    }

    /// Random point, drawn as a random convex combination of extreme points
    /// (uniform for boxes).
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            SignalSet::Interval { lo, hi } => vec![lo + (hi - lo) * rng.random::<f64>()],
            SignalSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            _ => {
                let verts = self.vertices();
                let mut w: Vec<f64> = (0..verts.len()).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                combine(&verts, &w)
            }
        }
    }

    /// `max_{x in X} c^T x - min_{x in X} c^T x`.
    pub fn width(&self, c: &[f64]) -> f64 {
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        self.lin_max_raw(c).value + self.lin_max_raw(&neg).value
    }

    /// Whether `self` is contained in `other`, by checking extreme points.
    pub fn is_subset_of(&self, other: &SignalSet, tol: f64) -> bool {
        self.dim() == other.dim() && self.vertices().iter().all(|v| other.contains(v, tol))
    }
}

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn combine(points: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; points[0].len()];
    for (p, &wi) in points.iter().zip(w) {
        if wi != 0.0 {
            for (o, v) in out.iter_mut().zip(p) {
                *o += wi * v;
            }
        }
    }
    out
}

/// Projection onto `{x >= 0, sum x = s}` by the sort-and-threshold rule.
pub fn project_simplex(z: &[f64], s: f64) -> Vec<f64> {
    let mut u = z.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - s) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    z.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Weights of the point of `conv(points)` closest to `z`, by Wolfe's
/// min-norm-point algorithm applied to `points - z`.
pub(crate) fn hull_projection_weights(points: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let m = points.len();
    if m == 1 {
        return vec![1.0];
    }
    let p: Vec<Vec<f64>> = points
        .iter()
        .map(|v| v.iter().zip(z).map(|(a, b)| a - b).collect())
        .collect();
    let scale = p
        .iter()
        .map(|v| dot(v, v))
        .fold(0.0f64, f64::max)
        .max(1e-300);

    let start = (0..m)
        .min_by(|&a, &b| dot(&p[a], &p[a]).total_cmp(&dot(&p[b], &p[b])))
        .unwrap();
    let mut active = vec![start];
    let mut lam = vec![1.0];

    for _ in 0..(50 * m + 100) {
        let x = combine_subset(&p, &active, &lam);
        let xx = dot(&x, &x);
        // Major cycle: entering point with smallest <x, p_j>.
        let (j, best) = (0..m)
            .map(|j| (j, dot(&x, &p[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - best <= PROJECTION_TOL * PROJECTION_TOL * scale || active.contains(&j) {
            break;
        }
        active.push(j);
        lam.push(0.0);
        // Minor cycles: move to the affine minimizer while it stays in the hull.
        loop {
            let Some(alpha) = affine_minimizer(&p, &active) else {
                // Degenerate corral: drop the newcomer.
                active.pop();
                lam.pop();
                break;
            };
            if alpha.iter().all(|&a| a > 1e-14) {
                lam = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (l, a) in lam.iter().zip(&alpha) {
                if *a <= 1e-14 && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in lam.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            let keep: Vec<usize> = (0..active.len()).filter(|&i| lam[i] > 1e-14).collect();
            active = keep.iter().map(|&i| active[i]).collect();
            lam = keep.iter().map(|&i| lam[i]).collect();
            let s: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= s);
        }
    }

    let mut w = vec![0.0; m];
    for (&i, &l) in active.iter().zip(&lam) {
        w[i] = l;
    }
    w
}

fn combine_subset(p: &[Vec<f64>], idx: &[usize], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p[0].len()];
    for (&i, &wi) in idx.iter().zip(w) {
        for (o, v) in out.iter_mut().zip(&p[i]) {
            *o += wi * v;
        }
    }
    out
}

/// Minimizer of `|sum a_i p_i|` over `sum a_i = 1` for the given subset.
fn affine_minimizer(p: &[Vec<f64>], idx: &[usize]) -> Option<Vec<f64>> {
    let k = idx.len();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    for a in 0..k {
        for b in 0..k {
            m[(a, b)] = dot(&p[idx[a]], &p[idx[b]]);
        }
        m[(a, k)] = 1.0;
        m[(k, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = m.lu().solve(&rhs)?;
    let alpha: Vec<f64> = sol.iter().take(k).copied().collect();
    if alpha.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(alpha)
}
