//! Monte Carlo epsilon-risk, certified lower bounds, and the Bernoulli table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{check_dim, Error, Result};
use crate::estimator::{construct, sample_stats, theta_epsilon, AffineEstimator};
use crate::families::dot;
use crate::problem::{bernoulli_problem, EstimationProblem};
use crate::saddle::{phi_star, SolverOptions};

/// Two-sided 99.9% normal quantile.
pub const WILSON_Z: f64 = 3.290_526_731_491_926;
pub const MIN_REPS: usize = 10_000;
const CHUNK: usize = 1024;
pub const HIST_BINS: usize = 40;

fn hist_bin(err: f64, bound: f64) -> usize {
    if !(bound > 0.0) || !err.is_finite() {
        return if err > 0.0 || !err.is_finite() { HIST_BINS - 1 } else { 0 };
    }
    ((err / (2.0 * bound) * HIST_BINS as f64) as usize).min(HIST_BINS - 1)
}

/// Upper end of the Wilson score interval for `k` successes in `n` trials.
pub fn wilson_upper(k: u64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + half) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRisk {
    pub x: Vec<f64>,
    /// Error threshold the violations were counted against.
    pub bound: f64,
    pub violations: u64,
    pub n_reps: u64,
    pub frequency: f64,
    pub wilson_upper: f64,
    pub mean_abs_error: f64,
    /// Counts of `|error|` in `HIST_BINS` equal bins over `[0, 2 bound)`;
    /// the last bin also takes everything beyond.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub epsilon: f64,
    pub n_reps: u64,
    pub seed: u64,
    pub points: Vec<PointRisk>,
    pub worst_frequency: f64,
    pub worst_wilson_upper: f64,
    /// Worst frequency below epsilon and Wilson bound below 1.2 epsilon.
    pub pass: bool,
}

impl RiskReport {
    fn from_points(epsilon: f64, n_reps: u64, seed: u64, points: Vec<PointRisk>) -> Self {
        let worst_frequency = points.iter().map(|p| p.frequency).fold(0.0, f64::max);
        let worst_wilson_upper = points.iter().map(|p| p.wilson_upper).fold(0.0, f64::max);
        Self {
            epsilon,
            n_reps,
            seed,
            pass: worst_frequency < epsilon && worst_wilson_upper < 1.2 * epsilon,
            points,
            worst_frequency,
            worst_wilson_upper,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["point", "x", "bound", "violations", "n_reps", "frequency", "wilson_upper", "mean_abs_error"])?;
        for (i, p) in self.points.iter().enumerate() {
            let x = p.x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            w.write_record([
                i.to_string(),
                x,
                p.bound.to_string(),
                p.violations.to_string(),
                p.n_reps.to_string(),
                p.frequency.to_string(),
                p.wilson_upper.to_string(),
                p.mean_abs_error.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Plot-ready histogram of `|g_hat - g^T x|` per point.
    pub fn histogram_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["point", "bin_lo", "bin_hi", "count"])?;
        for (i, p) in self.points.iter().enumerate() {
            let width = 2.0 * p.bound / HIST_BINS as f64;
            for (j, c) in p.histogram.iter().enumerate() {
                let hi = if j + 1 == HIST_BINS { f64::INFINITY } else { (j + 1) as f64 * width };
                w.write_record([i.to_string(), (j as f64 * width).to_string(), hi.to_string(), c.to_string()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Replication RNG for `(seed, point, chunk)`; independent of thread scheduling.
pub fn replication_rng(seed: u64, point: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point);
    rng.set_word_pos((chunk as u128) << 40);
    rng
}

/// Generic coverage engine: `trial(x, rng)` returns the absolute error of one
/// replication; errors above `bound(point)` count as violations.
pub fn mc_coverage<T, B>(epsilon: f64, x_list: &[Vec<f64>], n_reps: usize, seed: u64, bound: B, trial: T) -> Result<RiskReport>
where
    T: Fn(usize, &[f64], &mut ChaCha8Rng) -> f64 + Sync,
    B: Fn(usize) -> f64,
{
    if n_reps < MIN_REPS {
        return Err(Error::InvalidInput(format!("n_reps must be at least {MIN_REPS}, got {n_reps}")));
    }
    let chunks = n_reps.div_ceil(CHUNK);
    let points = x_list
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let b = bound(i);
            // Per-chunk partial results are combined in chunk order so the
            // floating-point sums do not depend on scheduling.
            let parts: Vec<(u64, f64, Vec<u64>)> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = replication_rng(seed, i as u64, c as u64);
                    let reps = CHUNK.min(n_reps - c * CHUNK);
                    let mut v = 0u64;
                    let mut s = 0.0;
                    let mut hist = vec![0u64; HIST_BINS];
                    for _ in 0..reps {
                        let err = trial(i, x, &mut rng);
                        if !(err <= b) {
                            v += 1;
                        }
                        s += err;
                        hist[hist_bin(err, b)] += 1;
                    }
                    (v, s, hist)
                })
                .collect();
            let mut violations = 0;
            let mut abs_sum = 0.0;
            let mut histogram = vec![0u64; HIST_BINS];
            for (v, s, h) in parts {
                violations += v;
                abs_sum += s;
                for (a, b) in histogram.iter_mut().zip(h) {
                    *a += b;
                }
            }
            let n = n_reps as u64;
            PointRisk {
                x: x.clone(),
                bound: b,
                violations,
                n_reps: n,
                frequency: violations as f64 / n as f64,
                wilson_upper: wilson_upper(violations, n, WILSON_Z),
                mean_abs_error: abs_sum / n as f64,
                histogram,
            }
        })
        .collect();
    Ok(RiskReport::from_points(epsilon, n_reps as u64, seed, points))
}

/// Empirical frequency of `|g_hat - g^T x| > estimator.risk_bound` at each `x`.
pub fn mc_risk(
    problem: &EstimationProblem,
    estimator: &AffineEstimator,
    x_list: &[Vec<f64>],
    n_reps: usize,
    seed: u64,
) -> Result<RiskReport> {
    mc_risk_with_bound(problem, estimator, x_list, n_reps, seed, estimator.risk_bound)
}

/// As [`mc_risk`] against an arbitrary error threshold.
pub fn mc_risk_with_bound(
    problem: &EstimationProblem,
    estimator: &AffineEstimator,
    x_list: &[Vec<f64>],
    n_reps: usize,
    seed: u64,
    bound: f64,
) -> Result<RiskReport> {
    check_dim("estimator groups", problem.groups.len(), estimator.groups.len())?;
    for x in x_list {
        check_dim("x", problem.dim(), x.len())?;
        if !problem.set.contains(x, 1e-9) {
            return Err(Error::Infeasible(format!("x = {x:?} is outside the signal set")));
        }
    }
    mc_coverage(problem.epsilon, x_list, n_reps, seed, |_| bound, |_, x, rng| {
        let stats = sample_stats(problem, x, rng);
        let est = estimator.evaluate_stats(&stats).expect("statistics match the estimator");
        (est - dot(&problem.g, x)).abs()
    })
}

/// `Phi_*(ln(1/(2 sqrt(eps))))`: a certified lower bound on the minimax epsilon-risk.
pub fn lower_bound_hellinger(problem: &EstimationProblem, opts: &SolverOptions) -> Result<f64> {
    problem.validate()?;
    let r = 0.5 * (1.0 / (4.0 * problem.epsilon)).ln();
    phi_star(problem, r, opts)
}

/// Exact `TV(Bin(L, p), Bin(L, q))` by enumeration of all `L + 1` outcomes.
pub fn binomial_tv(l: u64, p: f64, q: f64) -> f64 {
    let ln_pmf = |k: u64, s: f64| -> f64 {
        let mut v = ln_binomial(l, k);
        if k > 0 {
            v += k as f64 * s.ln();
        }
        if k < l {
            v += (l - k) as f64 * (1.0 - s).ln();
        }
        v
    };
    let tv: f64 = (0..=l).map(|k| (ln_pmf(k, p).exp() - ln_pmf(k, q).exp()).abs()).sum();
    (0.5 * tv).min(1.0)
}

/// Largest `d` such that `Bin(L, 1/2 + d)` and `Bin(L, 1/2 - d)` cannot be
/// told apart with total error probability below `2 eps`.
pub fn bernoulli_testing_lower_bound(l: u64, epsilon: f64) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidInput("L must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1/4), got {epsilon}")));
    }
    // The minimal sum of errors, 1 - TV, decreases in d.
    let ok = |d: f64| 1.0 - binomial_tv(l, 0.5 + d, 0.5 - d) >= 2.0 * epsilon;
    let (mut lo, mut hi) = (0.0, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            break;
        }
    }
    Ok(lo)
}

/// One cell of the Bernoulli table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliCell {
    pub epsilon: f64,
    pub l: u64,
    pub gamma: f64,
    pub delta: f64,
    pub upper: f64,
    pub lower: f64,
    pub ratio: f64,
    pub theta: f64,
    pub certified: bool,
}

/// Parameter segment of the Bernoulli illustration.
pub fn bernoulli_segment() -> (f64, f64) {
    let e = (-16f64).exp();
    (e, 1.0 - e)
}

/// Affine estimate `gamma + delta * sum(omega)` of a Bernoulli parameter from
/// `L` draws, its risk bound, and the two-point testing lower bound.
pub fn bernoulli_cell(epsilon: f64, l: u64, opts: &SolverOptions) -> Result<BernoulliCell> {
    let (lo, hi) = bernoulli_segment();
    let problem = bernoulli_problem(lo, hi, l as usize, epsilon)?;
    let est = construct(&problem, opts)?;
    let (gamma, delta) = est.bernoulli_coefficients()?;
    let lower = bernoulli_testing_lower_bound(l, epsilon)?;
    Ok(BernoulliCell {
        epsilon,
        l,
        gamma,
        delta,
        upper: est.risk_bound,
        lower,
        ratio: est.risk_bound / lower,
        theta: theta_epsilon(epsilon)?,
        certified: est.certified,
    })
}

pub const TABLE_EPSILONS: [f64; 3] = [0.05, 0.01, 0.001];
pub const TABLE_LS: [u64; 3] = [10, 100, 1000];

/// The full 3 x 3 grid, rows ordered by epsilon then L.
pub fn bernoulli_table(opts: &SolverOptions) -> Result<Vec<BernoulliCell>> {
    let cells: Vec<(f64, u64)> = TABLE_EPSILONS
        .iter()
        .flat_map(|&e| TABLE_LS.iter().map(move |&l| (e, l)))
        .collect();
    cells.par_iter().map(|&(e, l)| bernoulli_cell(e, l, opts)).collect()
}

/// Published reference values `(eps, L, gamma, delta, upper, lower, ratio)`.
pub const TABLE_REFERENCE: [(f64, u64, f64, f64, f64, f64, f64); 9] = [
    (0.05, 10, 2.91e-1, 4.18e-2, 3.61e-1, 2.49e-1, 1.45),
    (0.05, 100, 4.13e-2, 9.17e-3, 1.33e-1, 8.19e-2, 1.63),
    (0.05, 1000, 4.29e-3, 9.91e-4, 4.29e-3, 2.60e-3, 1.65),
    (0.01, 10, 3.58e-1, 2.83e-2, 4.04e-1, 3.29e-1, 1.23),
    (0.01, 100, 5.83e-2, 8.84e-2, 1.59e-1, 1.15e-1, 1.38),
    (0.01, 1000, 6.15e-3, 9.88e-4, 5.13e-2, 3.67e-3, 1.40),
    (0.001, 10, 4.19e-1, 1.61e-2, 4.42e-1, 3.98e-1, 1.11),
    (0.001, 100, 8.15e-2, 8.37e-3, 1.88e-1, 1.51e-1, 1.24),
    (0.001, 1000, 8.79e-3, 9.82e-4, 6.14e-3, 4.88e-3, 1.26),
];

pub const THETA_REFERENCE: [(f64, f64); 3] = [(0.05, 4.58), (0.01, 3.29), (0.001, 2.75)];

/// Relative differences of a computed cell against the reference row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellDiff {
    pub epsilon: f64,
    pub l: u64,
    pub gamma_rel: f64,
    pub delta_rel: f64,
    pub upper_rel: f64,
    pub lower_rel: f64,
    pub ratio_rel: f64,
}

pub fn reference_diff(cell: &BernoulliCell) -> Option<CellDiff> {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    TABLE_REFERENCE
        .iter()
        .find(|r| r.0 == cell.epsilon && r.1 == cell.l)
        .map(|r| CellDiff {
            epsilon: r.0,
            l: r.1,
            gamma_rel: rel(cell.gamma, r.2),
            delta_rel: rel(cell.delta, r.3),
            upper_rel: rel(cell.upper, r.4),
            lower_rel: rel(cell.lower, r.5),
            ratio_rel: rel(cell.ratio, r.6),
        })
}
