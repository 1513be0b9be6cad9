//! Oracle probes, each a pure function of a seed (or explicit inputs) returning
//! a description of the first violation.

// `ensure!(a <= b)` must fail on NaN, hence the negated comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use minimax_affine::inner::InnerOptions;
use minimax_affine::pet::{pet_objective, PetModel};
use minimax_affine::problem::EstimationProblem;
use minimax_affine::risk::binomial_tv;
use minimax_affine::saddle::{outer_value, phi_r};
use minimax_affine::{FamilySpec, SignalSet, TestFunction};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{random_problem, FAMILIES};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub fn random_phis<R: Rng>(p: &EstimationProblem, rng: &mut R) -> Vec<TestFunction> {
    p.groups
        .iter()
        .map(|g| {
            let theta: Vec<f64> = (0..g.family.free_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            g.family.phi_from_free(&theta)
        })
        .collect()
}

fn lerp_phis(a: &[TestFunction], b: &[TestFunction]) -> Vec<TestFunction> {
    a.iter().zip(b).map(|(x, y)| x.scale(0.5).add(&y.scale(0.5)).unwrap()).collect()
}

fn mid(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn tight_inner() -> InnerOptions {
    InnerOptions { tol: 1e-11, max_iter: 200_000 }
}

/// [DERIVED] `Phi_bar_r` is a pointwise max of functions jointly convex in `(phi, alpha)`.
pub fn outer_value_convex(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fam = FAMILIES[rng.random_range(0..FAMILIES.len())];
    let p = random_problem(fam, &mut rng);
    let r = (2.0 / p.epsilon).ln();
    let (f1, f2) = (random_phis(&p, &mut rng), random_phis(&p, &mut rng));
    let (a1, a2) = (rng.random_range(0.05..2.0), rng.random_range(0.05..2.0));
    let ov = |f: &[TestFunction], a: f64| outer_value(&p, f, a, r, tight_inner()).map(|o| o.value).map_err(|e| e.to_string());
    let (v1, v2) = (ov(&f1, a1)?, ov(&f2, a2)?);
    let vm = ov(&lerp_phis(&f1, &f2), 0.5 * (a1 + a2))?;
    ensure!(vm <= 0.5 * (v1 + v2) + 1e-7 * (1.0 + vm.abs()), "{fam:?}: {vm} > avg of {v1}, {v2}");
    Ok(())
}

/// [DERIVED] `Phi_r` is concave in `(x, y)`: log-exp-moments are concave in the parameter.
pub fn phi_r_concave(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fam = FAMILIES[rng.random_range(0..FAMILIES.len())];
    let p = random_problem(fam, &mut rng);
    let r = (2.0 / p.epsilon).ln();
    let phi = random_phis(&p, &mut rng);
    let alpha = rng.random_range(0.05..2.0);
    let pts: Vec<Vec<f64>> = (0..4).map(|_| p.set.random_point(&mut rng)).collect();
    let f = |x: &[f64], y: &[f64]| phi_r(&p, x, y, &phi, alpha, r).map_err(|e| e.to_string());
    let (v1, v2) = (f(&pts[0], &pts[1])?, f(&pts[2], &pts[3])?);
    let vm = f(&mid(&pts[0], &pts[2]), &mid(&pts[1], &pts[3]))?;
    ensure!(vm >= 0.5 * (v1 + v2) - 1e-10 * (1.0 + vm.abs()), "{fam:?}: {vm} < avg of {v1}, {v2}");
    Ok(())
}

/// [DERIVED] The emission objective is jointly convex in `(gamma, alpha)`.
pub fn pet_objective_convex(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, l) = (rng.random_range(1..=4usize), rng.random_range(1..=6usize));
    let q = DMatrix::from_fn(n, l, |_, _| rng.random_range(0.01..1.0) / l as f64);
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|v| v * rng.random_range(1.5..5.0)).collect();
    let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = PetModel::new(q, SignalSet::boxed(lo, hi).unwrap(), g, 0.05).unwrap();
    let r = (2.0f64 / 0.05).ln();
    let g1: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
    let g2: Vec<f64> = (0..l).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (a1, a2) = (rng.random_range(0.01..5.0), rng.random_range(0.01..5.0));
    let f = |g: &[f64], a: f64| pet_objective(&model, g, a, r).map(|o| o.value).map_err(|e| e.to_string());
    let (v1, v2, vm) = (f(&g1, a1)?, f(&g2, a2)?, f(&mid(&g1, &g2), 0.5 * (a1 + a2))?);
    ensure!(vm <= 0.5 * (v1 + v2) + 1e-10 * (1.0 + vm.abs()), "{vm} > avg of {v1}, {v2}");
    Ok(())
}

/// [DERIVED] Central differences (step 1e-5) of `F_phi(mu)` agree with the gradient to 1e-6.
/// Discrete directions stay on the probability simplex.
pub fn lem_gradient(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(2..=4usize);
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
    let s: f64 = w.iter().sum();
    let cases = vec![
        (FamilySpec::discrete(m).unwrap(), w.iter().map(|v| v / s).collect::<Vec<_>>()),
        (FamilySpec::poisson(), vec![rng.random_range(0.5..20.0)]),
        (
            FamilySpec::gaussian(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5])).unwrap(),
            vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
        ),
    ];
    for (fam, mu) in cases {
        let theta: Vec<f64> = (0..fam.free_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi = fam.phi_from_free(&theta);
        let grad = fam.lem_grad_mu(&phi, &mu).unwrap();
        let discrete = matches!(fam, FamilySpec::Discrete { .. });
        for j in 0..mu.len() {
            let mut d = vec![0.0; mu.len()];
            d[j] += 1.0;
            if discrete {
                d[(j + 1) % mu.len()] -= 1.0;
            }
            let h = 1e-5;
            let up: Vec<f64> = mu.iter().zip(&d).map(|(m, v)| m + h * v).collect();
            let dn: Vec<f64> = mu.iter().zip(&d).map(|(m, v)| m - h * v).collect();
            let fd = (fam.lem(&phi, &up).unwrap() - fam.lem(&phi, &dn).unwrap()) / (2.0 * h);
            let an = dot(&grad, &d);
            ensure!((fd - an).abs() <= 1e-6 * (1.0 + an.abs()), "{fam:?} j={j}: {fd} vs {an}");
        }
    }
    Ok(())
}

/// [DERIVED] `AffH(mu, nu) = E_mu sqrt(p_nu / p_mu) = exp F_{llr/2}(mu)`, a second route
/// through the likelihood-ratio and log-exp-moment code.
pub fn affinity_via_moment(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = |w: Vec<f64>| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<_>>()
    };
    let w1 = norm((0..3).map(|_| rng.random_range(0.05..1.0)).collect());
    let w2 = norm((0..3).map(|_| rng.random_range(0.05..1.0)).collect());
    let cases = vec![
        (FamilySpec::discrete(3).unwrap(), w1, w2),
        (FamilySpec::poisson(), vec![rng.random_range(0.1..30.0)], vec![rng.random_range(0.1..30.0)]),
        (
            FamilySpec::gaussian(DMatrix::from_row_slice(2, 2, &[1.0, -0.4, -0.4, 3.0])).unwrap(),
            vec![rng.random_range(-3.0..3.0), 0.0],
            vec![0.0, rng.random_range(-3.0..3.0)],
        ),
    ];
    for (fam, mu, nu) in cases {
        let direct = fam.hellinger_affinity_log(&mu, &nu).unwrap();
        let half = fam.log_likelihood_ratio(&nu, &mu).unwrap().scale(0.5);
        let via = fam.lem(&half, &mu).unwrap();
        ensure!((direct - via).abs() <= 1e-9, "{fam:?}: {direct} vs {via}");
    }
    Ok(())
}

/// [DERIVED] Poisson affinity against the series `sum_k sqrt(p_k q_k)`.
pub fn poisson_affinity_series(mu: f64, nu: f64) -> Check {
    let (mut log_term, mut sum) = (-(mu + nu) / 2.0, 0.0);
    for k in 0..400u32 {
        if k > 0 {
            log_term += 0.5 * (mu * nu).ln() - (k as f64).ln();
        }
        sum += log_term.exp();
    }
    let closed = FamilySpec::poisson().hellinger_affinity_log(&[mu], &[nu]).unwrap();
    ensure!((closed - sum.ln()).abs() <= 1e-9, "mu {mu} nu {nu}: {closed} vs {}", sum.ln());
    Ok(())
}

/// [DERIVED] Scalar Gaussian affinity against composite Simpson quadrature of `sqrt(p q)`.
pub fn gaussian_affinity_quadrature(mu: f64, nu: f64, var: f64) -> Check {
    let sd = var.sqrt();
    let dens = |t: f64, m: f64| (-(t - m).powi(2) / (2.0 * var)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let (a, b, n) = (mu.min(nu) - 14.0 * sd, mu.max(nu) + 14.0 * sd, 20_000usize);
    let h = (b - a) / n as f64;
    let f = |t: f64| (dens(t, mu) * dens(t, nu)).sqrt();
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    let quad = (s * h / 3.0).ln();
    let fam = FamilySpec::gaussian(DMatrix::from_element(1, 1, var)).unwrap();
    let closed = fam.hellinger_affinity_log(&[mu], &[nu]).unwrap();
    ensure!((closed - quad).abs() <= 1e-9, "mu {mu} nu {nu} var {var}: {closed} vs {quad}");
    Ok(())
}

/// [DERIVED] Binomial TV by a multiplicative pmf recursion and the one-sided sum over `{p_k > q_k}`.
pub fn binomial_tv_brute_force(l: u64, p: f64, q: f64) -> Check {
    let pmf = |s: f64| {
        let mut v = vec![(1.0 - s).powi(l as i32)];
        for k in 1..=l {
            let prev = v[(k - 1) as usize];
            v.push(prev * (l - k + 1) as f64 / k as f64 * s / (1.0 - s));
        }
        v
    };
    let (a, b) = (pmf(p), pmf(q));
    let one_sided: f64 = a.iter().zip(&b).filter(|(x, y)| x > y).map(|(x, y)| x - y).sum();
    let tv = binomial_tv(l, p, q);
    ensure!((tv - one_sided).abs() <= 1e-10, "L {l} p {p} q {q}: {tv} vs {one_sided}");
    Ok(())
}

/// [DERIVED] `lin_max` dominates `c^T x` on X and is attained; the projection is feasible,
/// idempotent and satisfies the obtuse-angle condition.
pub fn set_primitives(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4usize);
    let set = match rng.random_range(0..3) {
        0 => {
            let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..0.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|v| v + rng.random_range(0.1..3.0)).collect();
            SignalSet::boxed(lo, hi).unwrap()
        }
        1 => SignalSet::simplex(n, rng.random_range(0.5..10.0), 0.0).unwrap(),
        _ => {
            let k = rng.random_range(1..=5usize);
            SignalSet::vpolytope((0..k).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()).unwrap()
        }
    };
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lm = set.lin_max(&c).unwrap();
    ensure!(set.contains(&lm.point, 1e-9), "argmax outside the set");
    ensure!((dot(&c, &lm.point) - lm.value).abs() <= 1e-9 * (1.0 + lm.value.abs()), "value not attained");
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let pz = set.project(&z).unwrap();
    ensure!(set.contains(&pz, 1e-8), "projection outside the set");
    let ppz = set.project(&pz).unwrap();
    ensure!(pz.iter().zip(&ppz).all(|(a, b)| (a - b).abs() <= 1e-7), "projection not idempotent");
    let resid: Vec<f64> = z.iter().zip(&pz).map(|(a, b)| a - b).collect();
    for _ in 0..20 {
        let x = set.random_point(&mut rng);
        ensure!(dot(&c, &x) <= lm.value + 1e-9, "lin_max exceeded at {x:?}");
        let dx: Vec<f64> = x.iter().zip(&pz).map(|(a, b)| a - b).collect();
        ensure!(dot(&resid, &dx) <= 1e-7 * (1.0 + dot(&resid, &resid)), "obtuse-angle condition violated");
    }
    Ok(())
}
