//! Emission tomography: bin counts `y_l ~ Poisson(q_l(x))`, `q_l(x) = sum_i q_il x_i`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ellipsoid::{self, Cut};
use crate::error::{check_dim, Error, Result};
use crate::estimator::{AffineEstimator, EstimatorGroup};
use crate::families::{sample_poisson, FamilySpec, TestFunction};
use crate::problem::{AffineMap, ChannelGroup, EstimationProblem};
use crate::sets::SignalSet;

#[derive(Clone, Debug, PartialEq)]
pub struct PetModel {
    /// `n x L` registration probabilities `q_il`.
    pub q: DMatrix<f64>,
    pub set: SignalSet,
    pub g: Vec<f64>,
    pub epsilon: f64,
}

impl PetModel {
    pub fn new(q: DMatrix<f64>, set: SignalSet, g: Vec<f64>, epsilon: f64) -> Result<Self> {
        let m = Self { q, set, g, epsilon };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0, 1/4), got {}",
                self.epsilon
            )));
        }
        self.set.validate()?;
        let (n, l) = (self.q.nrows(), self.q.ncols());
        check_dim("rows of q (voxels)", self.set.dim(), n)?;
        check_dim("functional g", n, self.g.len())?;
        if l == 0 {
            return Err(Error::InvalidInput("model has no bins".into()));
        }
        if self.q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("registration probabilities must be finite and nonnegative".into()));
        }
        for j in 0..l {
            if self.q.column(j).sum() <= 0.0 {
                return Err(Error::InvalidInput(format!("bin {j} never registers; remove it")));
            }
        }
        for i in 0..n {
            let s = self.q.row(i).sum();
            if s > 1.0 + 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "registration probabilities of voxel {i} sum to {s} > 1"
                )));
            }
        }
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = -1.0;
            let min = -self.set.lin_max_raw(&e).value;
            if !(min > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "signal set must lie in x > 0; coordinate {i} reaches {min}"
                )));
            }
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.q.ncols()
    }

    /// `q_l(x)` for every bin.
    pub fn bin_means(&self, x: &[f64]) -> Vec<f64> {
        (0..self.q.ncols())
            .map(|l| (0..self.q.nrows()).map(|i| self.q[(i, l)] * x[i]).sum())
            .collect()
    }

    /// The product-Poisson encoding used by the generic pipeline.
    pub fn to_problem(&self) -> Result<EstimationProblem> {
        let groups = (0..self.q.ncols())
            .map(|l| {
                let row = DMatrix::from_fn(1, self.q.nrows(), |_, i| self.q[(i, l)]);
                ChannelGroup::new(FamilySpec::poisson(), AffineMap::linear(row), 1)
            })
            .collect::<Result<Vec<_>>>()?;
        EstimationProblem::new(groups, self.set.clone(), self.g.clone(), self.epsilon)
    }

    /// `x -> sum_l q_il w_l` coefficients.
    fn q_times(&self, w: &[f64]) -> Vec<f64> {
        (0..self.q.nrows())
            .map(|i| (0..self.q.ncols()).map(|l| self.q[(i, l)] * w[l]).sum())
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PetObjective {
    pub value: f64,
    pub u: f64,
    pub v: f64,
    pub x_arg: Vec<f64>,
    pub y_arg: Vec<f64>,
}

fn pet_eval(model: &PetModel, gamma: &[f64], alpha: f64, r: f64) -> (PetObjective, Vec<f64>, f64) {
    let ex: Vec<f64> = gamma.iter().map(|gm| (-gm / alpha).exp() - 1.0).collect();
    let ey: Vec<f64> = gamma.iter().map(|gm| (gm / alpha).exp() - 1.0).collect();
    // The bracket is linear in x (and in y) for fixed (gamma, alpha).
    let cx: Vec<f64> = model.g.iter().zip(model.q_times(&ex)).map(|(g, q)| g + alpha * q).collect();
    let cy: Vec<f64> = model.g.iter().zip(model.q_times(&ey)).map(|(g, q)| -g + alpha * q).collect();
    let xu = model.set.lin_max_raw(&cx);
    let yv = model.set.lin_max_raw(&cy);
    let value = xu.value + yv.value + 2.0 * alpha * r;

    // Danskin subgradient in (gamma, alpha).
    let qx = model.bin_means(&xu.point);
    let qy = model.bin_means(&yv.point);
    let mut grad = Vec::with_capacity(gamma.len());
    let mut d_alpha = 2.0 * r;
    for l in 0..gamma.len() {
        let (a, b) = ((-gamma[l] / alpha).exp(), (gamma[l] / alpha).exp());
        grad.push(-qx[l] * a + qy[l] * b);
        let t = gamma[l] / alpha;
        d_alpha += qx[l] * (a - 1.0 + t * a) + qy[l] * (b - 1.0 - t * b);
    }
    (
        PetObjective {
            value,
            u: xu.value,
            v: yv.value,
            x_arg: xu.point,
            y_arg: yv.point,
        },
        grad,
        d_alpha,
    )
}

/// `Phi_bar_r(gamma, alpha)` of the emission model.
pub fn pet_objective(model: &PetModel, gamma: &[f64], alpha: f64, r: f64) -> Result<PetObjective> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    check_dim("gamma", model.bins(), gamma.len())?;
    Ok(pet_eval(model, gamma, alpha, r).0)
}

#[derive(Clone, Copy, Debug)]
pub struct PetOptions {
    pub rel_tol: f64,
    /// Absolute gap on the doubled program; overrides `rel_tol`.
    pub abs_tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for PetOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: None,
            max_iter: 400_000,
        }
    }
}

/// Minimizes `Phi_bar_r(gamma, alpha)` at `r = ln(2/eps)` by the ellipsoid method.
///
/// The search region is `0 < alpha <= w / (2r)` and
/// `|gamma_l| <= alpha_max * ln(rho_l) / 2`, where `w` is the variation of
/// `g` over X and `rho_l` the ratio of the largest to the smallest `q_l` on X;
/// a minimizer of the form `gamma_l = alpha/2 ln(q_l(x)/q_l(y))` lies inside.
pub fn pet_construct(model: &PetModel, opts: &PetOptions) -> Result<AffineEstimator> {
    model.validate()?;
    let r = (2.0 / model.epsilon).ln();
    let l = model.bins();
    let n = model.q.nrows();
    let width = model.set.width(&model.g);
    let alpha_max = (width / (2.0 * r)).max(1e-300);
    let alpha_floor = alpha_max * 1e-12;
    let gamma_box: Vec<f64> = (0..l)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| model.q[(i, j)]).collect();
            let neg: Vec<f64> = col.iter().map(|v| -v).collect();
            let hi = model.set.lin_max_raw(&col).value;
            let lo = -model.set.lin_max_raw(&neg).value;
            alpha_max * 0.5 * (hi / lo).ln() + 1e-9 * alpha_max
        })
        .collect();

    let mut center = vec![0.0; l + 1];
    center[l] = 0.5 * alpha_max;
    let scale = ((l + 1) as f64).sqrt() * (1.0 + 1e-9);
    let mut radii: Vec<f64> = gamma_box.iter().map(|b| b * scale).collect();
    radii.push(0.5 * alpha_max * scale);

    let out = ellipsoid::minimize(
        center,
        &radii,
        opts.max_iter,
        |f| opts.abs_tol.unwrap_or(opts.rel_tol * (1.0 + f.abs())),
        |z| {
            let alpha = z[l];
            if alpha < alpha_floor {
                let mut normal = vec![0.0; l + 1];
                normal[l] = -1.0;
                return Cut::Feasibility { normal, depth: alpha_floor - alpha };
            }
            if alpha > alpha_max {
                let mut normal = vec![0.0; l + 1];
                normal[l] = 1.0;
                return Cut::Feasibility { normal, depth: alpha - alpha_max };
            }
            for j in 0..l {
                // Box on gamma, and |gamma_l| <= 600 alpha to keep exp finite.
                let bound = gamma_box[j].min(600.0 * alpha);
                if z[j].abs() > bound {
                    let mut normal = vec![0.0; l + 1];
                    normal[j] = z[j].signum();
                    if bound < gamma_box[j] {
                        normal[l] = -600.0;
                        return Cut::Feasibility { normal, depth: z[j].abs() - 600.0 * alpha };
                    }
                    return Cut::Feasibility { normal, depth: z[j].abs() - bound };
                }
            }
            let (obj, mut grad, d_alpha) = pet_eval(model, &z[..l], alpha, r);
            grad.push(d_alpha);
            Cut::Objective { value: obj.value, subgradient: grad }
        },
    );
    if !out.value.is_finite() {
        return Err(Error::InvalidInput("no feasible point found for the emission program".into()));
    }
    let gamma = out.z[..l].to_vec();
    let alpha = out.z[l];
    let (obj, _, _) = pet_eval(model, &gamma, alpha, r);
    let lower = out.lower.max(0.0);
    Ok(AffineEstimator {
        groups: gamma
            .iter()
            .map(|&gm| EstimatorGroup {
                kind: "poisson".into(),
                copies: 1,
                phi: TestFunction::affine(vec![gm], 0.0),
            })
            .collect(),
        c: 0.5 * (obj.u - obj.v),
        risk_bound: 0.5 * obj.value,
        epsilon: model.epsilon,
        gap: 0.5 * (obj.value - lower),
        certified: out.converged,
        fingerprint: model.to_problem()?.fingerprint(),
        method: "pet".into(),
        x_bar: obj.x_arg,
        y_bar: obj.y_arg,
        phi_star: 0.5 * lower,
        alpha: Some(alpha),
        iterations: out.iterations,
    })
}

/// Independent bin counts at `x_true`.
pub fn pet_simulate(model: &PetModel, x_true: &[f64], seed: u64) -> Result<Vec<u64>> {
    check_dim("x_true", model.q.nrows(), x_true.len())?;
    if !model.set.contains(x_true, 1e-9) {
        return Err(Error::Infeasible(format!("x_true = {x_true:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(model
        .bin_means(x_true)
        .into_iter()
        .map(|m| sample_poisson(m, &mut rng))
        .collect())
}

/// Stylized parallel-beam geometry on a `k x k` pixel grid.
///
/// Each pixel emits into `angles` equally spaced projection directions with
/// total detection efficiency `efficiency`; within a direction the emission is
/// split between the two detector bins nearest to its projected position.
/// Bins that never register are dropped.
pub fn parallel_beam_geometry(k: usize, angles: usize, detectors: usize, efficiency: f64) -> Result<DMatrix<f64>> {
    if k == 0 || angles == 0 || detectors == 0 || !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::InvalidInput("invalid geometry parameters".into()));
    }
    let n = k * k;
    let mut q = DMatrix::zeros(n, angles * detectors);
    let half = 0.5 * k as f64;
    // Field of view radius covers the grid diagonal.
    let fov = half * std::f64::consts::SQRT_2;
    for a in 0..angles {
        let th = std::f64::consts::PI * a as f64 / angles as f64;
        let (c, s) = (th.cos(), th.sin());
        for iy in 0..k {
            for ix in 0..k {
                let (px, py) = (ix as f64 + 0.5 - half, iy as f64 + 0.5 - half);
                let t = px * c + py * s;
                // Position in detector units, bin centers at 0.5, 1.5, ...
                let u = (t + fov) / (2.0 * fov) * detectors as f64 - 0.5;
                let j0 = u.floor().clamp(0.0, (detectors - 1) as f64) as usize;
                let j1 = (j0 + 1).min(detectors - 1);
                let w1 = (u - j0 as f64).clamp(0.0, 1.0);
                let base = efficiency / angles as f64;
                let i = iy * k + ix;
                q[(i, a * detectors + j0)] += base * (1.0 - w1);
                q[(i, a * detectors + j1)] += base * w1;
            }
        }
    }
    let keep: Vec<usize> = (0..q.ncols()).filter(|&j| q.column(j).sum() > 0.0).collect();
    Ok(DMatrix::from_fn(n, keep.len(), |i, j| q[(i, keep[j])]))
}

/// Default demo: 2x2 phantom, two directions, region of interest = top row.
pub fn demo_model(epsilon: f64) -> Result<PetModel> {
    let q = parallel_beam_geometry(2, 2, 2, 0.5)?;
    let set = SignalSet::boxed(vec![50.0; 4], vec![500.0; 4])?;
    PetModel::new(q, set, vec![1.0, 1.0, 0.0, 0.0], epsilon)
}
