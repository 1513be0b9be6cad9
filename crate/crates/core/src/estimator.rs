//! Affine estimators `g_hat(omega) = sum_l phi_l(omega_l) + c` and their construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::families::{dot, sample_gaussian, sample_poisson, FamilySpec, Observation, TestFunction};
use crate::problem::EstimationProblem;
use crate::saddle::{minimize_outer, SaddleSolution, SolverOptions};

/// Test function shared by the `copies` channels of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorGroup {
    /// `discrete`, `poisson` or `gaussian`.
    pub kind: String,
    pub copies: usize,
    pub phi: TestFunction,
}

/// Sufficient statistic of one channel group.
#[derive(Clone, Debug, PartialEq)]
pub enum GroupStat {
    /// Category counts of a discrete group.
    Histogram(Vec<u64>),
    /// Sum of the observations of a Poisson (length 1) or Gaussian group.
    Sum(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineEstimator {
    pub groups: Vec<EstimatorGroup>,
    pub c: f64,
    /// Certified bound on the epsilon-risk over the signal set.
    pub risk_bound: f64,
    pub epsilon: f64,
    /// `risk_bound` minus the certified lower value of the same program.
    pub gap: f64,
    pub certified: bool,
    /// SHA-256 of the problem the estimator was built for.
    pub fingerprint: String,
    /// `saddle`, `gaussian` or `pet`.
    pub method: String,
    /// Extremal pair of the dual program.
    pub x_bar: Vec<f64>,
    pub y_bar: Vec<f64>,
    /// Certified lower value `Phi_*(r)` at the construction radius.
    pub phi_star: f64,
    pub alpha: Option<f64>,
    pub iterations: usize,
}

impl AffineEstimator {
    pub fn channel_count(&self) -> usize {
        self.groups.iter().map(|g| g.copies).sum()
    }

    /// `sum_l phi_l(omega_l) + c`; one observation per channel, groups in order.
    pub fn evaluate(&self, observations: &[Observation]) -> Result<f64> {
        check_dim("observations", self.channel_count(), observations.len())?;
        let mut total = self.c;
        let mut it = observations.iter();
        for grp in &self.groups {
            for _ in 0..grp.copies {
                total += grp.phi.evaluate(it.next().expect("length checked"))?;
            }
        }
        Ok(total)
    }

    /// Evaluation from per-group sufficient statistics.
    pub fn evaluate_stats(&self, stats: &[GroupStat]) -> Result<f64> {
        check_dim("group statistics", self.groups.len(), stats.len())?;
        let mut total = self.c;
        for (grp, st) in self.groups.iter().zip(stats) {
            total += match (&grp.phi, st) {
                (TestFunction::Table { values }, GroupStat::Histogram(h)) => {
                    check_dim("histogram", values.len(), h.len())?;
                    values.iter().zip(h).map(|(v, &k)| v * k as f64).sum::<f64>()
                }
                (TestFunction::Affine { slope, intercept }, GroupStat::Sum(s)) => {
                    check_dim("observation sum", slope.len(), s.len())?;
                    dot(slope, s) + grp.copies as f64 * intercept
                }
                _ => {
                    return Err(Error::InvalidInput(
                        "statistic does not match the group's test function".into(),
                    ))
                }
            };
        }
        Ok(total)
    }

    /// Intercept `gamma` and slope `delta` of `gamma + delta * sum_l omega_l`
    /// for a single tied Bernoulli group.
    pub fn bernoulli_coefficients(&self) -> Result<(f64, f64)> {
        match self.groups.as_slice() {
            [EstimatorGroup {
                phi: TestFunction::Table { values },
                copies,
                ..
            }] if values.len() == 2 => Ok((*copies as f64 * values[0] + self.c, values[1] - values[0])),
            _ => Err(Error::InvalidInput(
                "estimator is not a single tied Bernoulli group".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `theta(eps) = 2 ln(2/eps) / ln(1/(4 eps))`.
pub fn theta_epsilon(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::InvalidInput(format!(
            "epsilon must lie in (0, 1/4), got {epsilon}"
        )));
    }
    Ok(2.0 * (2.0 / epsilon).ln() / (1.0 / (4.0 * epsilon)).ln())
}

pub(crate) fn estimator_from_saddle(
    problem: &EstimationProblem,
    sol: &SaddleSolution,
    method: &str,
) -> AffineEstimator {
    let groups = problem
        .groups
        .iter()
        .zip(&sol.phi)
        .map(|(g, phi)| EstimatorGroup {
            kind: g.family.kind_name().to_string(),
            copies: g.copies,
            phi: phi.clone(),
        })
        .collect();
    AffineEstimator {
        groups,
        c: 0.5 * (sol.u - sol.v),
        risk_bound: 0.5 * sol.upper,
        epsilon: problem.epsilon,
        gap: 0.5 * sol.gap,
        certified: sol.certified,
        fingerprint: problem.fingerprint(),
        method: method.to_string(),
        x_bar: sol.x_bar.clone(),
        y_bar: sol.y_bar.clone(),
        phi_star: 0.5 * sol.dual,
        alpha: Some(sol.alpha),
        iterations: sol.iterations,
    }
}

/// Builds the estimator from the saddle point at `r = ln(2/eps)`.
///
/// If the iteration cap is hit the estimator is still returned, with
/// `certified = false` and the bound of the best iterate.
pub fn construct(problem: &EstimationProblem, opts: &SolverOptions) -> Result<AffineEstimator> {
    problem.validate()?;
    let r = (2.0 / problem.epsilon).ln();
    let sol = match minimize_outer(problem, r, opts) {
        Ok(s) => s,
        Err(Error::SolverCap { solution, .. }) => *solution,
        Err(e) => return Err(e),
    };
    Ok(estimator_from_saddle(problem, &sol, "saddle"))
}

/// Draws the per-group sufficient statistics of one observation tuple at `x`.
pub fn sample_stats<R: Rng + ?Sized>(problem: &EstimationProblem, x: &[f64], rng: &mut R) -> Vec<GroupStat> {
    problem
        .groups
        .iter()
        .map(|grp| {
            let mu = grp.map.apply(x);
            let n = grp.copies;
            match &grp.family {
                FamilySpec::Discrete { .. } => GroupStat::Histogram(multinomial(n as u64, &mu, rng)),
                FamilySpec::Poisson => GroupStat::Sum(vec![sample_poisson(n as f64 * mu[0], rng) as f64]),
                FamilySpec::Gaussian(g) => {
                    let mean: Vec<f64> = mu.iter().map(|m| n as f64 * m).collect();
                    GroupStat::Sum(sample_gaussian(g, &mean, n as f64, rng))
                }
                FamilySpec::Product(_) => unreachable!("groups hold single families"),
            }
        })
        .collect()
}

/// Multinomial counts by sequential binomial splitting.
fn multinomial<R: Rng + ?Sized>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    use rand_distr::{Binomial, Distribution};
    let mut out = vec![0; p.len()];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for (i, &pi) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == p.len() {
            out[i] = left;
            break;
        }
        let q = (pi / mass).clamp(0.0, 1.0);
        let k = Binomial::new(left, q).expect("valid binomial").sample(rng);
        out[i] = k;
        left -= k;
        mass -= pi;
    }
    out
}
