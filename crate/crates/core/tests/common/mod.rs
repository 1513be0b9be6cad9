//! Random problem instances shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use minimax_affine::gaussian::GaussianProblem;
use minimax_affine::inner::InnerOptions;
use minimax_affine::pet::PetModel;
use minimax_affine::problem::{AffineMap, ChannelGroup, EstimationProblem};
use minimax_affine::saddle::SolverOptions;
use minimax_affine::{FamilySpec, SignalSet};
use nalgebra::DMatrix;
use rand::Rng;

pub const EPSILONS: [f64; 4] = [0.01, 0.05, 0.1, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Bernoulli,
    Poisson,
    Gaussian,
    Product,
}

pub const FAMILIES: [Family; 4] = [Family::Bernoulli, Family::Poisson, Family::Gaussian, Family::Product];

fn functional<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if g.iter().map(|v| v * v).sum::<f64>() > 0.05 {
            return g;
        }
    }
}

fn convex_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Success probability `w^T x` on a box inside `[0.05, 0.95]^n`.
fn bernoulli_group<R: Rng>(n: usize, copies: usize, rng: &mut R) -> ChannelGroup {
    let w = convex_weights(n, rng);
    let mut a = DMatrix::zeros(2, n);
    for j in 0..n {
        a[(0, j)] = -w[j];
        a[(1, j)] = w[j];
    }
    ChannelGroup::new(FamilySpec::bernoulli(), AffineMap::new(a, vec![1.0, 0.0]).unwrap(), copies).unwrap()
}

fn poisson_group<R: Rng>(n: usize, copies: usize, rng: &mut R) -> ChannelGroup {
    let a = DMatrix::from_fn(1, n, |_, _| rng.random_range(0.0..1.0));
    let b = rng.random_range(0.1..1.0);
    ChannelGroup::new(FamilySpec::poisson(), AffineMap::new(a, vec![b]).unwrap(), copies).unwrap()
}

fn gaussian_group<R: Rng>(n: usize, copies: usize, rng: &mut R) -> ChannelGroup {
    let k = rng.random_range(1..=2);
    let a = DMatrix::from_fn(k, n, |_, _| rng.random_range(-1.5..1.5));
    ChannelGroup::new(FamilySpec::gaussian_identity(k), AffineMap::linear(a), copies).unwrap()
}

fn random_box<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> SignalSet {
    let mut l = Vec::with_capacity(n);
    let mut h = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(lo..hi);
        let b = rng.random_range(lo..hi);
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        l.push(a);
        h.push(b.max(a + 0.05 * (hi - lo)).min(hi));
    }
    SignalSet::boxed(l, h).unwrap()
}

/// Signal dimension at most 5, at most 20 channels.
pub fn random_problem<R: Rng>(family: Family, rng: &mut R) -> EstimationProblem {
    let n = rng.random_range(1..=5);
    let eps = EPSILONS[rng.random_range(0..EPSILONS.len())];
    let g = functional(n, rng);
    let (groups, set) = match family {
        Family::Bernoulli => {
            let k = rng.random_range(1..=2);
            let groups = (0..k).map(|_| bernoulli_group(n, rng.random_range(1..=10), rng)).collect();
            (groups, random_box(n, 0.05, 0.95, rng))
        }
        Family::Poisson => {
            let k = rng.random_range(1..=3);
            let groups = (0..k).map(|_| poisson_group(n, rng.random_range(1..=5), rng)).collect();
            (groups, random_box(n, 0.0, 20.0, rng))
        }
        Family::Gaussian => {
            let k = rng.random_range(1..=3);
            let groups = (0..k).map(|_| gaussian_group(n, rng.random_range(1..=4), rng)).collect();
            (groups, random_box(n, -3.0, 3.0, rng))
        }
        Family::Product => {
            let groups = vec![
                bernoulli_group(n, rng.random_range(1..=6), rng),
                poisson_group(n, rng.random_range(1..=6), rng),
                gaussian_group(n, rng.random_range(1..=6), rng),
            ];
            (groups, random_box(n, 0.05, 0.95, rng))
        }
    };
    EstimationProblem::new(groups, set, g, eps).unwrap()
}

/// `omega = A x + xi` with `A` of size `m x n`, `n <= 4`, and a random box.
pub fn random_gaussian_box<R: Rng>(rng: &mut R) -> GaussianProblem {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=4);
    let scale = rng.random_range(0.2..3.0);
    let a = DMatrix::from_fn(m, n, |_, _| scale * rng.random_range(-1.0..1.0));
    let set = random_box(n, -2.0, 2.0, rng);
    let eps = EPSILONS[rng.random_range(0..EPSILONS.len())];
    GaussianProblem::new(a, set, functional(n, rng), eps).unwrap()
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Emission model with `n <= 4` voxels and `L <= 6` bins.
pub fn random_pet_model<R: Rng>(rng: &mut R) -> PetModel {
    let n = rng.random_range(1..=4);
    let l = rng.random_range(1..=6);
    let mut q = DMatrix::from_fn(n, l, |_, _| rng.random_range(0.0..1.0));
    for i in 0..n {
        let eff = rng.random_range(0.2..1.0);
        let s = q.row(i).sum();
        for j in 0..l {
            q[(i, j)] *= eff / s;
        }
    }
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..20.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|v| v * rng.random_range(2.0..10.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eps = [0.01, 0.05, 0.1][rng.random_range(0..3)];
    PetModel::new(q, SignalSet::boxed(lo, hi).unwrap(), g, eps).unwrap()
}

/// Generic solver settings tight enough that the certified gap is far below 1e-6 relative.
pub fn tight_solver() -> SolverOptions {
    SolverOptions {
        rel_tol: 1e-9,
        inner: InnerOptions { tol: 1e-12, max_iter: 50_000 },
        ..SolverOptions::default()
    }
}
