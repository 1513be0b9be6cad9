//! Direct Gaussian observations `omega = A x + b + xi`, `xi ~ N(0, I)`.
//!
//! The sharper estimator minimizes
//! `Psi_bar(phi) = max_{x,y in X} [g^T (x - y) + phi^T A (y - x)] + 2 q ||phi||`
//! with `q = erfinv_tail(eps / 2)`, using only the linear oracle of `X`.

use nalgebra::DMatrix;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::ellipsoid::{self, Cut};
use crate::error::{check_dim, Error, Result};
use crate::estimator::{AffineEstimator, EstimatorGroup};
use crate::families::{dot, FamilySpec, TestFunction};
use crate::inner::{maximize_concave, InnerOptions};
use crate::problem::{AffineMap, ChannelGroup, EstimationProblem};
use crate::sets::SignalSet;

/// Upper tail of the standard normal distribution.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Lower-tail standard normal quantile (Wichura's AS 241).
fn normal_quantile(p: f64) -> f64 {
    #[allow(clippy::excessive_precision)]
    const A: [f64; 8] = [
        3.387_132_872_796_366_5,
        133.141_667_891_784_38,
        1_971.590_950_306_551_3,
        13_731.693_765_509_461,
        45_921.953_931_549_87,
        67_265.770_927_008_7,
        33_430.575_583_588_13,
        2_509.080_928_730_122_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_91,
        687.187_007_492_057_9,
        5_394.196_021_424_751,
        21_213.794_301_586_597,
        39_307.895_800_092_71,
        28_729.085_735_721_943,
        5_226.495_278_852_546,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        0.241_780_725_177_450_6,
        0.022_723_844_989_269_184,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_759,
        1.676_384_830_183_803_8,
        0.689_767_334_985_1,
        0.148_103_976_427_480_08,
        0.015_198_666_563_616_457,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        0.296_560_571_828_504_9,
        0.026_532_189_526_576_124,
        0.001_242_660_947_388_078_4,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_9,
        0.136_929_880_922_735_8,
        0.014_875_361_290_850_615,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_446e-7,
        2.044_263_103_389_939_7e-15,
    ];
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

/// `x` with `P(N(0,1) > x) = y`.
pub fn erfinv_tail(y: f64) -> Result<f64> {
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::InvalidInput(format!("tail probability must lie in (0, 1), got {y}")));
    }
    let mut x = -normal_quantile(y);
    // One Newton step on the tail equation.
    let dens = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if dens > 0.0 {
        x += (normal_tail(x) - y) / dens;
    }
    Ok(x)
}

/// `psi(eps) = sqrt(2 ln(2/eps)) / erfinv_tail(eps)`.
pub fn psi_epsilon(epsilon: f64) -> Result<f64> {
    check_half_range(epsilon)?;
    Ok((2.0 * (2.0 / epsilon).ln()).sqrt() / erfinv_tail(epsilon)?)
}

fn check_half_range(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("epsilon must lie in (0, 1/2), got {epsilon}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianProblem {
    /// `L x n` sensing matrix.
    pub a: DMatrix<f64>,
    /// Known offset of the observation mean.
    pub b: Vec<f64>,
    pub set: SignalSet,
    pub g: Vec<f64>,
    pub epsilon: f64,
}

impl GaussianProblem {
    pub fn new(a: DMatrix<f64>, set: SignalSet, g: Vec<f64>, epsilon: f64) -> Result<Self> {
        let b = vec![0.0; a.nrows()];
        Self::with_offset(a, b, set, g, epsilon)
    }

    pub fn with_offset(a: DMatrix<f64>, b: Vec<f64>, set: SignalSet, g: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_half_range(epsilon)?;
        set.validate()?;
        check_dim("sensing matrix columns", set.dim(), a.ncols())?;
        check_dim("offset", a.nrows(), b.len())?;
        check_dim("functional g", set.dim(), g.len())?;
        if a.iter().chain(&b).chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entries in the Gaussian problem".into()));
        }
        Ok(Self { a, b, set, g, epsilon })
    }

    /// The same model as a generic problem (one identity-covariance group).
    ///
    /// Structure only: the epsilon range of the generic pipeline is not checked.
    pub fn to_estimation_problem(&self) -> EstimationProblem {
        let group = ChannelGroup {
            family: FamilySpec::gaussian_identity(self.a.nrows()),
            map: AffineMap {
                a: self.a.clone(),
                b: self.b.clone(),
            },
            copies: 1,
        };
        EstimationProblem {
            groups: vec![group],
            set: self.set.clone(),
            g: self.g.clone(),
            epsilon: self.epsilon,
        }
    }

    fn a_t(&self, v: &[f64]) -> Vec<f64> {
        (0..self.a.ncols())
            .map(|j| (0..self.a.nrows()).map(|i| self.a[(i, j)] * v[i]).sum())
            .collect()
    }

    fn a_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.nrows())
            .map(|i| (0..self.a.ncols()).map(|j| self.a[(i, j)] * x[j]).sum())
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GaussianOptions {
    /// Stop when `Psi_bar(phi) - lower <= rel_tol * (1 + Psi_bar(phi))`.
    pub rel_tol: f64,
    /// Absolute gap on the doubled program; overrides `rel_tol`.
    pub abs_tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for GaussianOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: None,
            max_iter: 200_000,
        }
    }
}

/// `Psi_bar(phi)` with a subgradient.
struct PsiBar<'a> {
    p: &'a GaussianProblem,
    kappa: f64,
}

impl PsiBar<'_> {
    fn linear_part(&self, phi: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let atphi = self.p.a_t(phi);
        let c: Vec<f64> = self.p.g.iter().zip(&atphi).map(|(g, a)| g - a).collect();
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        let xu = self.p.set.lin_max_raw(&c);
        let yv = self.p.set.lin_max_raw(&neg);
        (xu.value + yv.value, xu.point, yv.point)
    }

    fn eval(&self, phi: &[f64]) -> (f64, Vec<f64>) {
        let (w, x, y) = self.linear_part(phi);
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let mut s: Vec<f64> = self.p.a_mul(&d).into_iter().map(|v| -v).collect();
        let norm = dot(phi, phi).sqrt();
        if norm > 0.0 {
            for (si, pi) in s.iter_mut().zip(phi) {
                *si += 2.0 * self.kappa * pi / norm;
            }
        } else {
            // Subdifferential of the norm at 0 is the ball of radius 2 kappa:
            // take the element closest to cancelling the linear part.
            let sn = dot(&s, &s).sqrt();
            let t = if sn <= 2.0 * self.kappa { 1.0 } else { 2.0 * self.kappa / sn };
            for si in s.iter_mut() {
                *si *= 1.0 - t;
            }
        }
        (w + 2.0 * self.kappa * norm, s)
    }
}

/// Sharper Gaussian estimator `phi^T omega + c` with risk bound `Psi_bar(phi*) / 2`.
pub fn construct_gaussian(problem: &GaussianProblem, opts: &GaussianOptions) -> Result<AffineEstimator> {
    let kappa = erfinv_tail(problem.epsilon / 2.0)?;
    let m = problem.a.nrows();
    let psi = PsiBar { p: problem, kappa };
    let (w0, _, _) = psi.linear_part(&vec![0.0; m]);
    // Psi_bar(phi) >= 2 kappa ||phi|| and Psi_bar(0) = w0.
    let radius = (w0 / (2.0 * kappa)).max(1e-300) * (1.0 + 1e-9);
    let out = ellipsoid::minimize(
        vec![0.0; m],
        &vec![radius; m],
        opts.max_iter,
        |f| opts.abs_tol.unwrap_or(opts.rel_tol * (1.0 + f.abs())),
        |phi| {
            let (value, subgradient) = psi.eval(phi);
            Cut::Objective { value, subgradient }
        },
    );
    let phi = out.z;
    let (_, x_bar, y_bar) = psi.linear_part(&phi);
    let atphi = problem.a_t(&phi);
    let cvec: Vec<f64> = problem.g.iter().zip(&atphi).map(|(g, a)| g - a).collect();
    let neg: Vec<f64> = cvec.iter().map(|v| -v).collect();
    let u = problem.set.lin_max_raw(&cvec).value;
    let v = problem.set.lin_max_raw(&neg).value;
    let lower = out.lower.max(0.0);
    Ok(AffineEstimator {
        groups: vec![EstimatorGroup {
            kind: "gaussian".into(),
            copies: 1,
            phi: TestFunction::affine(phi.clone(), -dot(&phi, &problem.b)),
        }],
        c: 0.5 * (u - v),
        risk_bound: 0.5 * out.value,
        epsilon: problem.epsilon,
        gap: 0.5 * (out.value - lower),
        certified: out.converged,
        fingerprint: problem.to_estimation_problem().fingerprint(),
        method: "gaussian".into(),
        x_bar,
        y_bar,
        phi_star: 0.5 * lower,
        alpha: None,
        iterations: out.iterations,
    })
}

/// Maximizer of the Gaussian two-point program.
#[derive(Clone, Debug, Serialize)]
pub struct TwoPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
    pub upper_bound: f64,
}

/// `max { g^T (x - y) : ||A (x - y)|| <= radius, x, y in X }` with its maximizers.
pub fn gaussian_two_point(problem: &GaussianProblem, radius: f64) -> Result<TwoPoint> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::InvalidInput(format!("radius must be nonnegative, got {radius}")));
    }
    let n = problem.set.dim();
    let g = &problem.g;
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let xd = problem.set.lin_max_raw(g);
    let yd = problem.set.lin_max_raw(&neg_g);
    let width = xd.value + yd.value;
    let norm_of = |z: &[f64]| {
        let d: Vec<f64> = z[..n].iter().zip(&z[n..]).map(|(a, b)| a - b).collect();
        let ad = problem.a_mul(&d);
        dot(&ad, &ad).sqrt()
    };
    let value_of = |z: &[f64]| dot(g, &z[..n]) - dot(g, &z[n..]);
    let pair = |z: &[f64], ub: f64| TwoPoint {
        x: z[..n].to_vec(),
        y: z[n..].to_vec(),
        value: value_of(z),
        upper_bound: ub.max(value_of(z)),
    };

    let diam: Vec<f64> = xd.point.iter().chain(&yd.point).copied().collect();
    if norm_of(&diam) <= radius {
        return Ok(pair(&diam, width));
    }
    let c = problem.set.center();
    let mut best: Vec<f64> = c.iter().chain(&c).copied().collect();
    let mut ub = width;
    let opts = InnerOptions {
        tol: 1e-13,
        max_iter: 200_000,
    };
    // max g^T d - lambda/2 ||A d||^2 over X x X.
    let solve = |lambda: f64, warm: &[f64], ub: &mut f64| -> Vec<f64> {
        let res = maximize_concave(&[&problem.set, &problem.set], warm, opts, |z| {
            let d: Vec<f64> = z[..n].iter().zip(&z[n..]).map(|(a, b)| a - b).collect();
            let ad = problem.a_mul(&d);
            let atad = problem.a_t(&ad);
            let v = dot(g, &d) - 0.5 * lambda * dot(&ad, &ad);
            let gx: Vec<f64> = g.iter().zip(&atad).map(|(gi, ai)| gi - lambda * ai).collect();
            let grad: Vec<f64> = gx.iter().copied().chain(gx.iter().map(|v| -v)).collect();
            (v, grad)
        });
        *ub = ub.min(res.upper() + 0.5 * lambda * radius * radius);
        res.x
    };
    let done = |lb: f64, ub: f64| ub - lb <= 1e-11 * (1.0 + lb.abs());

    let mut lo = (0.0, diam.clone(), norm_of(&diam));
    let mut lam = width.max(1e-300) / radius.max(1e-6).powi(2);
    let mut hi = None;
    for _ in 0..200 {
        let z = solve(lam, &lo.1, &mut ub);
        let nz = norm_of(&z);
        if nz <= radius {
            hi = Some((lam, z, nz));
            break;
        }
        lo = (lam, z, nz);
        lam *= 4.0;
    }
    let Some(mut hi) = hi else {
        return Ok(pair(&best, ub));
    };
    if value_of(&hi.1) > value_of(&best) {
        best = hi.1.clone();
    }
    for _ in 0..200 {
        // The norm is convex, so interpolating to the radius stays feasible.
        if lo.2 > hi.2 {
            let t = ((radius - hi.2) / (lo.2 - hi.2)).clamp(0.0, 1.0);
            let z: Vec<f64> = lo.1.iter().zip(&hi.1).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            if norm_of(&z) <= radius && value_of(&z) > value_of(&best) {
                best = z;
            }
        }
        if done(value_of(&best), ub) || hi.0 - lo.0 <= 1e-15 * hi.0 {
            break;
        }
        let mid = 0.5 * (lo.0 + hi.0);
        let z = solve(mid, &hi.1, &mut ub);
        let nz = norm_of(&z);
        if nz <= radius {
            if value_of(&z) > value_of(&best) {
                best = z.clone();
            }
            hi = (mid, z, nz);
        } else {
            lo = (mid, z, nz);
        }
    }
    Ok(pair(&best, ub))
}

/// `max { g^T (x - y) : ||A (x - y)|| <= radius, x, y in X }`.
pub fn gaussian_two_point_value(problem: &GaussianProblem, radius: f64) -> Result<f64> {
    Ok(gaussian_two_point(problem, radius)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Tail probability by composite Simpson quadrature of the density.
    fn tail_quadrature(x: f64) -> f64 {
        let (a, b, n) = (x, x + 14.0, 40_000);
        let h = (b - a) / n as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn bisect_tail(y: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if tail_quadrature(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn erfinv_tail_examples() {
        assert_abs_diff_eq!(erfinv_tail(0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(erfinv_tail(0.025).unwrap(), 1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(erfinv_tail(0.158655).unwrap(), 1.0, epsilon = 1e-5);
        assert!(erfinv_tail(0.0).is_err() && erfinv_tail(1.0).is_err());
    }

    #[test]
    fn erfinv_tail_matches_quadrature_oracle() {
        for y in [0.9, 0.5, 0.2, 0.05, 0.025, 1e-3, 1e-6, 1e-9] {
            assert_abs_diff_eq!(erfinv_tail(y).unwrap(), bisect_tail(y), epsilon = 1e-9);
        }
    }

    #[test]
    fn psi_examples() {
        assert_abs_diff_eq!(psi_epsilon(0.05).unwrap(), 1.6514, epsilon = 1e-3);
        let p = psi_epsilon(1e-6).unwrap();
        assert!(p > 1.0 && p < 1.35);
        for eps in [0.05, 0.01, 0.001] {
            let sharper = erfinv_tail(eps / 2.0).unwrap() / erfinv_tail(eps).unwrap();
            assert!(sharper < psi_epsilon(eps).unwrap());
        }
    }

    fn scalar(a: f64) -> GaussianProblem {
        GaussianProblem::new(
            DMatrix::from_element(1, 1, a),
            SignalSet::interval(-1.0, 1.0).unwrap(),
            vec![1.0],
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn scalar_examples() {
        let q = erfinv_tail(0.025).unwrap();
        let est = construct_gaussian(&scalar(1.0), &GaussianOptions::default()).unwrap();
        assert!(est.certified);
        assert_abs_diff_eq!(est.risk_bound, 1.0, epsilon = 1e-8);
        let est = construct_gaussian(&scalar(4.0), &GaussianOptions::default()).unwrap();
        assert_abs_diff_eq!(est.risk_bound, q / 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(est.c, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn uninformative_observations() {
        let p = GaussianProblem::new(
            DMatrix::zeros(2, 2),
            SignalSet::boxed(vec![0.0, -1.0], vec![1.0, 3.0]).unwrap(),
            vec![1.0, 0.5],
            0.1,
        )
        .unwrap();
        let est = construct_gaussian(&p, &GaussianOptions::default()).unwrap();
        assert_eq!(est.groups[0].phi.max_abs(), 0.0);
        assert_abs_diff_eq!(est.risk_bound, 0.5 * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_trivial_cases() {
        let p = scalar(2.0);
        assert_abs_diff_eq!(gaussian_two_point_value(&p, 10.0).unwrap(), 2.0);
        assert_abs_diff_eq!(gaussian_two_point_value(&p, 0.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_two_point_value(&p, 1.0).unwrap(), 0.5, epsilon = 1e-9);
    }
}
