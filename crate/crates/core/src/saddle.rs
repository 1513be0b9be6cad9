//! The convex-concave saddle problem behind the affine estimator.
//!
//! For `r > 0` the function
//!
//! ```text
//! Phi_r(x, y; phi, alpha) = g^T x - g^T y
//!     + alpha * sum_l [F_l(-phi_l / alpha, A_l x) + F_l(phi_l / alpha, A_l y)] + 2 alpha r
//! ```
//!
//! is concave in `(x, y)` and convex in `(phi, alpha)`. Its saddle value equals
//! `max { g^T (x - y) : sum_l ln AffH(A_l x, A_l y) >= -r }`, which
//! [`hellinger_dual`] computes by bisection on the constraint multiplier. The
//! multiplier `lambda` and the maximizing pair give the saddle point directly:
//! `alpha = lambda / 2`, `phi_l = alpha/2 * ln(p_{A_l x} / p_{A_l y})`.
//! [`minimize_outer`] starts there and only iterates further when the gap
//! against the dual value is not yet within tolerance.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::families::{dot, TestFunction};
use crate::inner::{maximize_concave, InnerOptions, InnerResult};
use crate::problem::EstimationProblem;

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Absolute gap tolerance; `None` means `rel_tol * (1 + |dual|)`.
    pub tol: Option<f64>,
    pub rel_tol: f64,
    /// Cap shared by the multiplier bisection and the outer refinement.
    pub max_iter: usize,
    pub inner: InnerOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: None,
            rel_tol: 1e-6,
            max_iter: 5_000,
            inner: InnerOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn gap_tolerance(&self, dual: f64) -> f64 {
        self.tol.unwrap_or(self.rel_tol * (1.0 + dual.abs()))
    }
}

/// Maximizer of the Hellinger-constrained variation problem.
#[derive(Clone, Debug, Serialize)]
pub struct DualSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `g^T x - g^T y` at a feasible pair: a certified lower bound on `2 Phi_*(r)`.
    pub value: f64,
    /// Smallest Lagrangian bound seen: `2 Phi_*(r) <= upper_bound`.
    pub upper_bound: f64,
    pub lambda: f64,
    /// `sum_l ln AffH(A_l x, A_l y)` at the returned pair (`>= -r`).
    pub constraint: f64,
    pub r: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Result of [`minimize_outer`].
#[derive(Clone, Debug, Serialize)]
pub struct SaddleSolution {
    /// Per channel group, intercepts dropped.
    pub phi: Vec<TestFunction>,
    pub alpha: f64,
    /// Certified upper value `Phi_bar_r(phi, alpha)`.
    pub upper: f64,
    /// Certified lower value from the Hellinger program.
    pub dual: f64,
    pub gap: f64,
    pub r: f64,
    pub iterations: usize,
    pub tol: f64,
    pub certified: bool,
    /// Dual maximizers.
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub lambda: f64,
    /// Upper bounds on the two inner maxima and their maximizers.
    pub u: f64,
    pub v: f64,
    pub x_u: Vec<f64>,
    pub y_v: Vec<f64>,
}

/// `Phi_bar_r` at one point together with the inner maximizations.
#[derive(Clone, Debug)]
pub struct OuterValue {
    /// `U + V + 2 alpha r` with certified upper bounds for `U`, `V`.
    pub value: f64,
    pub u: f64,
    pub v: f64,
    pub x_arg: Vec<f64>,
    pub y_arg: Vec<f64>,
    /// Sum of the two inner Frank-Wolfe gaps.
    pub inner_gap: f64,
}

fn check_phi_groups(problem: &EstimationProblem, phi: &[TestFunction]) -> Result<()> {
    check_dim("test functions per channel group", problem.groups.len(), phi.len())?;
    for (grp, p) in problem.groups.iter().zip(phi) {
        grp.family.check_phi(p)?;
    }
    Ok(())
}

fn check_member(problem: &EstimationProblem, x: &[f64], name: &str) -> Result<()> {
    check_dim(name, problem.dim(), x.len())?;
    if !problem.set.contains(x, 1e-9) {
        return Err(Error::Infeasible(format!("{name} = {x:?}")));
    }
    Ok(())
}

/// `Phi_r(x, y; phi, alpha)`.
pub fn phi_r(
    problem: &EstimationProblem,
    x: &[f64],
    y: &[f64],
    phi: &[TestFunction],
    alpha: f64,
    r: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("r must be nonnegative, got {r}")));
    }
    check_member(problem, x, "x")?;
    check_member(problem, y, "y")?;
    check_phi_groups(problem, phi)?;
    let mut total = dot(&problem.g, x) - dot(&problem.g, y) + 2.0 * alpha * r;
    for (grp, p) in problem.groups.iter().zip(phi) {
        let mx = grp.map.apply(x);
        let my = grp.map.apply(y);
        let s = grp.family.lem(&p.scale(-1.0 / alpha), &mx)? + grp.family.lem(&p.scale(1.0 / alpha), &my)?;
        total += alpha * grp.copies as f64 * s;
    }
    Ok(total)
}

/// `max_x sign * g^T x + alpha * sum_l c_l F_l(psi_l, A_l x)`.
fn side_max(
    problem: &EstimationProblem,
    psis: &[TestFunction],
    sign: f64,
    alpha: f64,
    warm: Option<&[f64]>,
    opts: InnerOptions,
) -> InnerResult {
    let n = problem.dim();
    let objective = |x: &[f64]| -> (f64, Vec<f64>) {
        let mut v = sign * dot(&problem.g, x);
        let mut grad: Vec<f64> = problem.g.iter().map(|gi| sign * gi).collect();
        for (grp, psi) in problem.groups.iter().zip(psis) {
            let mu = grp.map.apply(x);
            let w = alpha * grp.copies as f64;
            v += w * grp.family.lem_raw(psi, &mu);
            let mut gm = vec![0.0; mu.len()];
            grp.family.lem_grad_mu_raw(psi, &mu, &mut gm);
            for (j, aj) in grp.map.apply_transpose(&gm).into_iter().enumerate() {
                grad[j] += w * aj;
            }
        }
        (v, grad)
    };
    let start = warm.map_or_else(|| problem.set.center(), |w| w.to_vec());
    if problem.groups.iter().all(|g| g.family.lem_is_affine_in_mu()) {
        // Linear objective: one call to the linear oracle is exact.
        let (_, c) = objective(&start);
        let lm = problem.set.lin_max_raw(&c);
        let (value, _) = objective(&lm.point);
        debug_assert_eq!(lm.point.len(), n);
        return InnerResult {
            x: lm.point,
            value,
            gap: 0.0,
            iterations: 1,
            converged: true,
        };
    }
    maximize_concave(&[&problem.set], &start, opts, objective)
}

/// Group test functions from concatenated free coordinates.
fn phis_from_free(problem: &EstimationProblem, theta: &[f64]) -> Vec<TestFunction> {
    let mut off = 0;
    problem
        .groups
        .iter()
        .map(|g| {
            let k = g.family.free_dim();
            let p = g.family.phi_from_free(&theta[off..off + k]);
            off += k;
            p
        })
        .collect()
}

struct OuterEval {
    value: OuterValue,
    u_res: InnerResult,
    v_res: InnerResult,
    grad_theta: Vec<f64>,
    grad_alpha: f64,
}

fn outer_eval(
    problem: &EstimationProblem,
    theta: &[f64],
    alpha: f64,
    r: f64,
    warm: Option<(&[f64], &[f64])>,
    opts: InnerOptions,
) -> OuterEval {
    let phis = phis_from_free(problem, theta);
    let psi_x: Vec<TestFunction> = phis.iter().map(|p| p.scale(-1.0 / alpha)).collect();
    let psi_y: Vec<TestFunction> = phis.iter().map(|p| p.scale(1.0 / alpha)).collect();
    let u_res = side_max(problem, &psi_x, 1.0, alpha, warm.map(|w| w.0), opts);
    let v_res = side_max(problem, &psi_y, -1.0, alpha, warm.map(|w| w.1), opts);

    // Danskin gradients at the inner maximizers.
    let mut grad_theta = vec![0.0; theta.len()];
    let mut grad_alpha = 2.0 * r;
    let mut off = 0;
    for (k, grp) in problem.groups.iter().enumerate() {
        let c = grp.copies as f64;
        let d = grp.family.free_dim();
        let mx = grp.map.apply(&u_res.x);
        let my = grp.map.apply(&v_res.x);
        let mut gx = vec![0.0; d];
        let mut gy = vec![0.0; d];
        grp.family.lem_grad_free_raw(&psi_x[k], &mx, &mut gx);
        grp.family.lem_grad_free_raw(&psi_y[k], &my, &mut gy);
        for i in 0..d {
            grad_theta[off + i] += c * (gy[i] - gx[i]);
        }
        grad_alpha += c
            * (grp.family.lem_raw(&psi_x[k], &mx) - grp.family.lem_radial_deriv_raw(&psi_x[k], &mx)
                + grp.family.lem_raw(&psi_y[k], &my)
                - grp.family.lem_radial_deriv_raw(&psi_y[k], &my));
        off += d;
    }
    let (u, v) = (u_res.upper(), v_res.upper());
    OuterEval {
        value: OuterValue {
            value: u + v + 2.0 * alpha * r,
            u,
            v,
            x_arg: u_res.x.clone(),
            y_arg: v_res.x.clone(),
            inner_gap: u_res.gap + v_res.gap,
        },
        u_res,
        v_res,
        grad_theta,
        grad_alpha,
    }
}

/// `Phi_bar_r(phi, alpha) = max_{x, y in X} Phi_r(x, y; phi, alpha)`.
pub fn outer_value(
    problem: &EstimationProblem,
    phi: &[TestFunction],
    alpha: f64,
    r: f64,
    opts: InnerOptions,
) -> Result<OuterValue> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    check_phi_groups(problem, phi)?;
    let psi_x: Vec<TestFunction> = phi.iter().map(|p| p.scale(-1.0 / alpha)).collect();
    let psi_y: Vec<TestFunction> = phi.iter().map(|p| p.scale(1.0 / alpha)).collect();
    let u = side_max(problem, &psi_x, 1.0, alpha, None, opts);
    let v = side_max(problem, &psi_y, -1.0, alpha, None, opts);
    for res in [&u, &v] {
        if !res.converged {
            return Err(Error::InnerNotConverged {
                iterations: res.iterations,
                gap: res.gap,
            });
        }
    }
    Ok(OuterValue {
        value: u.upper() + v.upper() + 2.0 * alpha * r,
        u: u.upper(),
        v: v.upper(),
        inner_gap: u.gap + v.gap,
        x_arg: u.x,
        y_arg: v.x,
    })
}

/// `sum_l c_l ln AffH(A_l x, A_l y)`.
pub fn affinity_constraint(problem: &EstimationProblem, x: &[f64], y: &[f64]) -> f64 {
    problem
        .groups
        .iter()
        .map(|g| g.copies as f64 * g.family.affinity_log_raw(&g.map.apply(x), &g.map.apply(y)))
        .sum()
}

/// `max_{x,y} g^T (x - y) + lambda * h(x, y)` over `X x X`.
fn lagrangian_max(problem: &EstimationProblem, lambda: f64, warm: &[f64], opts: InnerOptions) -> InnerResult {
    let n = problem.dim();
    let f = |z: &[f64]| -> (f64, Vec<f64>) {
        let (x, y) = z.split_at(n);
        let mut v = dot(&problem.g, x) - dot(&problem.g, y);
        let mut grad: Vec<f64> = problem.g.iter().copied().chain(problem.g.iter().map(|gi| -gi)).collect();
        for grp in &problem.groups {
            let mx = grp.map.apply(x);
            let my = grp.map.apply(y);
            let w = lambda * grp.copies as f64;
            v += w * grp.family.affinity_log_raw(&mx, &my);
            let mut gx = vec![0.0; mx.len()];
            let mut gy = vec![0.0; my.len()];
            grp.family.affinity_log_grad_raw(&mx, &my, &mut gx, &mut gy);
            for (j, a) in grp.map.apply_transpose(&gx).into_iter().enumerate() {
                grad[j] += w * a;
            }
            for (j, a) in grp.map.apply_transpose(&gy).into_iter().enumerate() {
                grad[n + j] += w * a;
            }
        }
        (v, grad)
    };
    maximize_concave(&[&problem.set, &problem.set], warm, opts, f)
}

struct DualPoint {
    z: Vec<f64>,
    value: f64,
    h: f64,
}

/// Solves `max { g^T x - g^T y : sum_l ln AffH(A_l x, A_l y) >= -r, x, y in X }`.
///
/// The returned value is attained at a feasible pair, so it is a certified
/// lower bound on `2 Phi_*(r)`; `upper_bound` comes from weak duality.
pub fn hellinger_dual(problem: &EstimationProblem, r: f64, opts: &SolverOptions) -> Result<DualSolution> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!("r must be a nonnegative number, got {r}")));
    }
    problem.validate_structure()?;
    let n = problem.dim();
    let g = &problem.g;
    let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
    let xd = problem.set.lin_max_raw(g);
    let yd = problem.set.lin_max_raw(&neg_g);
    let width = xd.value + yd.value;

    let point = |z: Vec<f64>| -> DualPoint {
        let (x, y) = z.split_at(n);
        let value = dot(g, x) - dot(g, y);
        let h = affinity_constraint(problem, x, y);
        DualPoint { z, value, h }
    };
    let finish = |p: &DualPoint, lambda: f64, ub: f64, iterations: usize, converged: bool| DualSolution {
        x: p.z[..n].to_vec(),
        y: p.z[n..].to_vec(),
        value: p.value,
        upper_bound: ub.max(p.value),
        lambda,
        constraint: p.h,
        r,
        iterations,
        converged,
    };

    let diam = point(xd.point.iter().chain(&yd.point).copied().collect());
    if diam.h >= -r {
        return Ok(finish(&diam, 0.0, width, 0, true));
    }

    // `(c, c)` is always feasible.
    let c = problem.set.center();
    let mut best = point(c.iter().chain(&c).copied().collect());
    let mut ub = width;
    let mut iterations = 0;
    let stop = |lb: f64, ub: f64| ub - lb <= 1e-3 * opts.gap_tolerance(lb);

    let mut lo = (0.0, diam);
    let mut warm = lo.1.z.clone();
    let solve = |lambda: f64, warm: &mut Vec<f64>, ub: &mut f64| -> DualPoint {
        let res = lagrangian_max(problem, lambda, warm, opts.inner);
        *ub = ub.min(res.upper() + lambda * r);
        *warm = res.x.clone();
        point(res.x)
    };

    // Bracket: grow lambda until the Lagrangian maximizer is feasible.
    let mut lam = width.max(1e-300) / r.max(1e-3);
    let mut hi: Option<(f64, DualPoint)> = None;
    while iterations < opts.max_iter {
        iterations += 1;
        let p = solve(lam, &mut warm, &mut ub);
        if p.h >= -r {
            hi = Some((lam, p));
            break;
        }
        lo = (lam, p);
        lam *= 4.0;
        if lam > 1e300 {
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Ok(finish(&best, lo.0, ub, iterations, false));
    };
    if hi.1.value > best.value {
        best = point(hi.1.z.clone());
    }

    // Feasible convex combination of the bracketing maximizers: the
    // constraint is concave, so interpolating to `h = -r` stays feasible.
    let combine = |lo: &DualPoint, hi: &DualPoint| -> Option<DualPoint> {
        if hi.h <= lo.h {
            return None;
        }
        let t = ((hi.h + r) / (hi.h - lo.h)).clamp(0.0, 1.0);
        let z: Vec<f64> = lo.z.iter().zip(&hi.z).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let z = project_pair(problem, &z);
        let p = point(z);
        (p.h >= -r).then_some(p)
    };

    let mut converged = stop(best.value, ub);
    while !converged && iterations < opts.max_iter {
        if let Some(p) = combine(&lo.1, &hi.1) {
            if p.value > best.value {
                best = p;
            }
        }
        converged = stop(best.value, ub);
        if converged || hi.0 - lo.0 <= 1e-15 * hi.0 {
            break;
        }
        iterations += 1;
        let mid = 0.5 * (lo.0 + hi.0);
        warm = hi.1.z.clone();
        let p = solve(mid, &mut warm, &mut ub);
        if p.h >= -r {
            if p.value > best.value {
                best = point(p.z.clone());
            }
            hi = (mid, p);
        } else {
            lo = (mid, p);
        }
        converged = stop(best.value, ub);
    }
    let lambda = hi.0;
    Ok(finish(&best, lambda, ub, iterations, converged))
}

fn project_pair(problem: &EstimationProblem, z: &[f64]) -> Vec<f64> {
    let n = problem.dim();
    let mut out = problem.set.project_raw(&z[..n]);
    out.extend(problem.set.project_raw(&z[n..]));
    out
}

/// Saddle point `(phi, alpha)` of `Phi_r` with a certified primal-dual gap.
///
/// On reaching the iteration cap before the gap closes, returns
/// [`Error::SolverCap`] carrying the best solution found.
pub fn minimize_outer(problem: &EstimationProblem, r: f64, opts: &SolverOptions) -> Result<SaddleSolution> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!("r must be positive, got {r}")));
    }
    let dual = hellinger_dual(problem, r, opts)?;
    let tol = opts.gap_tolerance(dual.value);
    let width = problem.set.width(&problem.g);

    // Warm start read off the dual solution.
    let (mut theta, mut alpha) = if dual.lambda > 0.0 {
        let alpha = dual.lambda / 2.0;
        let mut theta = Vec::with_capacity(problem.free_dim());
        for grp in &problem.groups {
            let mu = grp.map.apply(&dual.x);
            let nu = grp.map.apply(&dual.y);
            let llr = grp.family.llr_raw(&mu, &nu).scale(0.5 * alpha);
            theta.extend(grp.family.free_from_phi(&llr)?);
        }
        (theta, alpha)
    } else {
        (vec![0.0; problem.free_dim()], (tol / (8.0 * r)).max(f64::MIN_POSITIVE))
    };

    let alpha_floor = (1e-14 * width.max(1e-300) / r).max(f64::MIN_POSITIVE);
    alpha = alpha.max(alpha_floor);
    let mut ev = outer_eval(problem, &theta, alpha, r, Some((&dual.x, &dual.y)), opts.inner);
    let mut best = (theta.clone(), alpha, ev.value.clone());
    let mut iterations = dual.iterations;
    if best.2.value - dual.value > tol && dual.value >= width - tol {
        // Nothing is identifiable beyond the trivial estimator: the infimum
        // sits at phi = 0, alpha -> 0, where Phi_bar = width + 2 alpha r.
        let a0 = (tol / (8.0 * r)).max(alpha_floor);
        let zero = vec![0.0; problem.free_dim()];
        let ev0 = outer_eval(problem, &zero, a0, r, Some((&dual.x, &dual.y)), opts.inner);
        if ev0.value.value < best.2.value {
            best = (zero, a0, ev0.value);
        }
    }

    while best.2.value - dual.value > tol && iterations < opts.max_iter {
        iterations += 1;
        let norm2 = dot(&ev.grad_theta, &ev.grad_theta) + ev.grad_alpha * ev.grad_alpha;
        if !(norm2 > 0.0) {
            break;
        }
        // Polyak step towards the known optimal value.
        let step = (ev.value.value - dual.value) / norm2;
        for (t, gt) in theta.iter_mut().zip(&ev.grad_theta) {
            *t -= step * gt;
        }
        alpha = (alpha - step * ev.grad_alpha).max(alpha_floor);
        let warm = (ev.u_res.x.clone(), ev.v_res.x.clone());
        ev = outer_eval(problem, &theta, alpha, r, Some((&warm.0, &warm.1)), opts.inner);
        if ev.value.value < best.2.value {
            best = (theta.clone(), alpha, ev.value.clone());
        }
    }

    let (theta, alpha, ov) = best;
    let gap = (ov.value - dual.value).max(0.0);
    let certified = gap <= tol && dual.converged;
    let sol = SaddleSolution {
        phi: phis_from_free(problem, &theta),
        alpha,
        upper: ov.value,
        dual: dual.value,
        gap,
        r,
        iterations,
        tol,
        certified,
        x_bar: dual.x,
        y_bar: dual.y,
        lambda: dual.lambda,
        u: ov.u,
        v: ov.v,
        x_u: ov.x_arg,
        y_v: ov.y_arg,
    };
    if certified {
        Ok(sol)
    } else {
        Err(Error::SolverCap {
            gap,
            tol,
            solution: Box::new(sol),
        })
    }
}

/// `Phi_*(r)` from the certified dual value.
pub fn phi_star(problem: &EstimationProblem, r: f64, opts: &SolverOptions) -> Result<f64> {
    Ok(0.5 * hellinger_dual(problem, r, opts)?.value)
}

#[derive(Clone, Debug, Serialize)]
pub struct PhiStarPoint {
    pub r: f64,
    pub phi_star: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShapeCheck {
    /// Radii involved (two for scaling checks, three for concavity).
    pub r: Vec<f64>,
    /// Amount by which the inequality holds (negative means violated).
    pub slack: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcavityReport {
    pub points: Vec<PhiStarPoint>,
    pub nonnegative: bool,
    pub monotone: bool,
    /// Midpoint concavity over consecutive triples.
    pub triples: Vec<ShapeCheck>,
    /// `Phi_*(t r) >= t Phi_*(r)` for every pair `r_i < r_j`, `t = r_i / r_j`.
    pub scaling: Vec<ShapeCheck>,
    pub all_pass: bool,
}

/// Evaluates `Phi_*` on a sorted grid and checks its shape within `1e-6`.
pub fn phi_star_concavity_check(
    problem: &EstimationProblem,
    r_list: &[f64],
    opts: &SolverOptions,
) -> Result<ConcavityReport> {
    const TOL: f64 = 1e-6;
    if r_list.iter().any(|r| !(*r >= 0.0)) || r_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("r grid must be nonnegative and sorted".into()));
    }
    let points = r_list
        .iter()
        .map(|&r| Ok(PhiStarPoint { r, phi_star: phi_star(problem, r, opts)? }))
        .collect::<Result<Vec<_>>>()?;
    let nonnegative = points.iter().all(|p| p.phi_star >= -TOL);
    let monotone = points.windows(2).all(|w| w[1].phi_star >= w[0].phi_star - TOL);
    let triples: Vec<ShapeCheck> = points
        .windows(3)
        .filter(|w| w[2].r > w[0].r)
        .map(|w| {
            let t = (w[1].r - w[0].r) / (w[2].r - w[0].r);
            let chord = (1.0 - t) * w[0].phi_star + t * w[2].phi_star;
            let slack = w[1].phi_star - chord;
            ShapeCheck {
                r: vec![w[0].r, w[1].r, w[2].r],
                slack,
                pass: slack >= -TOL,
            }
        })
        .collect();
    let mut scaling = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if points[j].r > 0.0 {
                let t = points[i].r / points[j].r;
                let slack = points[i].phi_star - t * points[j].phi_star;
                scaling.push(ShapeCheck {
                    r: vec![points[i].r, points[j].r],
                    slack,
                    pass: slack >= -TOL,
                });
            }
        }
    }
    let all_pass = nonnegative
        && monotone
        && triples.iter().all(|c| c.pass)
        && scaling.iter().all(|c| c.pass);
    Ok(ConcavityReport {
        points,
        nonnegative,
        monotone,
        triples,
        scaling,
        all_pass,
    })
}
