//! Lepskii-type adaptation over nested signal sets `X^1 ⊂ ... ⊂ X^K`.
//!
//! Level `k` carries an affine estimate built at confidence `eps/K` on `X^k`.
//! On an observation the smallest index whose estimate agrees with every
//! larger level (within the sum of their bounds) is selected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{construct, AffineEstimator, GroupStat};
use crate::families::Observation;
use crate::problem::EstimationProblem;
use crate::saddle::{hellinger_dual, SolverOptions};
use crate::sets::SignalSet;

#[derive(Clone, Debug)]
pub struct NestedProblem {
    /// Observation model and functional; its set is replaced level by level.
    pub base: EstimationProblem,
    /// Increasing sets; the last one plays the role of `X`.
    pub sets: Vec<SignalSet>,
    /// Slack `delta`; defaults to `1e-4 (Phi^K + 1)`.
    pub delta: Option<f64>,
}

impl NestedProblem {
    pub fn new(base: EstimationProblem, sets: Vec<SignalSet>) -> Result<Self> {
        let p = Self { base, sets, delta: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sets.is_empty() {
            return Err(Error::InvalidInput("at least one level is required".into()));
        }
        for (k, w) in self.sets.windows(2).enumerate() {
            if !w[0].is_subset_of(&w[1], 1e-9) {
                return Err(Error::InvalidInput(format!("level {k} is not contained in level {}", k + 1)));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidInput(format!("delta must be positive, got {d}")));
            }
        }
        self.level_problem(self.sets.len() - 1)?.validate()
    }

    pub fn levels(&self) -> usize {
        self.sets.len()
    }

    pub fn level_problem(&self, k: usize) -> Result<EstimationProblem> {
        let p = self.base.with_set(self.sets[k].clone())?;
        p.with_epsilon(self.base.epsilon / self.sets.len() as f64)
    }
}

/// `3 ln(2K/eps) / ln(2/eps)`.
pub fn vartheta(k: usize, epsilon: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if !(epsilon > 0.0 && epsilon < 0.25) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1/4), got {epsilon}")));
    }
    Ok(3.0 * ((2.0 * k as f64 / epsilon).ln() / (2.0 / epsilon).ln()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveLevel {
    pub estimator: AffineEstimator,
    /// `Phi_*^k(ln(2K/eps))`, certified dual value (running max over levels).
    pub phi_star: f64,
    /// `Phi_*^k(ln(2/eps))`.
    pub phi_star_base: f64,
    /// `phi_star + delta`.
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdaptiveEstimator {
    pub levels: Vec<AdaptiveLevel>,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub vartheta: f64,
}

/// Builds all levels; fails if a level cannot be certified within `delta'`.
pub fn build_levels(nested: &NestedProblem, opts: &SolverOptions) -> Result<AdaptiveEstimator> {
    nested.validate()?;
    let kk = nested.levels();
    let eps = nested.base.epsilon;
    let r_k = (2.0 * kk as f64 / eps).ln();
    let r_1 = (2.0 / eps).ln();
    let problems: Vec<EstimationProblem> = (0..kk).map(|k| nested.level_problem(k)).collect::<Result<_>>()?;

    let duals: Vec<(f64, f64)> = problems
        .par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let a = hellinger_dual(p, r_k, opts)?;
            let b = hellinger_dual(p, r_1, opts)?;
            Ok((0.5 * a.value, 0.5 * b.value))
        })
        .collect::<Result<_>>()?;
    let mut phi = Vec::with_capacity(kk);
    let mut phi_base = Vec::with_capacity(kk);
    for (a, b) in &duals {
        phi.push(phi.last().map_or(*a, |p: &f64| p.max(*a)));
        phi_base.push(phi_base.last().map_or(*b, |p: &f64| p.max(*b)));
    }
    let delta = nested.delta.unwrap_or(1e-4 * (phi[kk - 1] + 1.0));
    let delta_prime = 0.5 * delta;

    // A gap of delta' on the doubled program keeps risk_bound <= Phi^k + delta'/2.
    let estimators: Vec<AffineEstimator> = problems
        .par_iter()
        .zip(&phi)
        .map(|(p, f)| {
            let level_opts = SolverOptions {
                tol: Some(opts.gap_tolerance(2.0 * f).min(delta_prime)),
                ..*opts
            };
            construct(p, &level_opts)
        })
        .collect::<Result<_>>()?;
    let mut levels = Vec::with_capacity(kk);
    for (k, est) in estimators.into_iter().enumerate() {
        if !est.certified || est.risk_bound > phi[k] + delta_prime {
            return Err(Error::NotCertified {
                gap: est.risk_bound - phi[k],
                tol: delta_prime,
            });
        }
        levels.push(AdaptiveLevel {
            estimator: est,
            phi_star: phi[k],
            phi_star_base: phi_base[k],
            bound: phi[k] + delta,
        });
    }
    Ok(AdaptiveEstimator {
        levels,
        epsilon: eps,
        delta,
        delta_prime,
        vartheta: vartheta(kk, eps)?,
    })
}

/// Smallest index `k` (0-based) with `|v_j - v_k| <= bound_j + bound_k` for all `j >= k`.
pub fn select_index(values: &[f64], bounds: &[f64]) -> usize {
    let kk = values.len();
    (0..kk)
        .find(|&k| (k..kk).all(|j| (values[j] - values[k]).abs() <= bounds[j] + bounds[k]))
        .unwrap_or(kk.saturating_sub(1))
}

impl AdaptiveEstimator {
    pub fn bounds(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.bound).collect()
    }

    /// Selected index (0-based) and the adaptive estimate.
    pub fn select_and_estimate(&self, observations: &[Observation]) -> Result<(usize, f64)> {
        let values = self
            .levels
            .iter()
            .map(|l| l.estimator.evaluate(observations))
            .collect::<Result<Vec<_>>>()?;
        let k = select_index(&values, &self.bounds());
        Ok((k, values[k]))
    }

    pub fn select_and_estimate_stats(&self, stats: &[GroupStat]) -> Result<(usize, f64)> {
        let values = self
            .levels
            .iter()
            .map(|l| l.estimator.evaluate_stats(stats))
            .collect::<Result<Vec<_>>>()?;
        let k = select_index(&values, &self.bounds());
        Ok((k, values[k]))
    }

    /// Error bound proven for signals in `X^k`: `3 Phi_*^k(ln(2K/eps)) + 3 delta`.
    pub fn guaranteed_bound(&self, k: usize) -> f64 {
        3.0 * self.levels[k].phi_star + 3.0 * self.delta
    }

    /// `vartheta Phi_*^k(ln(2/eps)) + 3 delta`, which dominates [`Self::guaranteed_bound`].
    pub fn vartheta_bound(&self, k: usize) -> f64 {
        self.vartheta * self.levels[k].phi_star_base + 3.0 * self.delta
    }
}

/// Scalar Gaussian demo: `omega = a x + xi`, nested intervals `[-s, s]`.
pub fn interval_demo(a: f64, half_widths: &[f64], epsilon: f64) -> Result<NestedProblem> {
    let s_max = half_widths.iter().cloned().fold(0.0, f64::max);
    let base = crate::problem::gaussian_rows_problem(
        &nalgebra::DMatrix::from_element(1, 1, a),
        SignalSet::interval(-s_max, s_max)?,
        vec![1.0],
        epsilon,
    )?;
    let sets = half_widths
        .iter()
        .map(|&s| SignalSet::interval(-s, s))
        .collect::<Result<Vec<_>>>()?;
    NestedProblem::new(base, sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::bernoulli_problem;
    use approx::assert_relative_eq;

    #[test]
    fn vartheta_values() {
        for eps in [0.2, 0.05, 0.001] {
            assert_eq!(vartheta(1, eps).unwrap(), 3.0);
        }
        assert_relative_eq!(vartheta(10, 0.05).unwrap(), 4.872, epsilon = 1e-3);
        let mut prev = 0.0;
        for k in 1..20 {
            let v = vartheta(k, 0.01).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!(vartheta(0, 0.05).is_err() && vartheta(2, 0.3).is_err());
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_index(&[0.7], &[0.1]), 0);
        assert_eq!(select_index(&[1.0, 1.0, 1.0], &[0.1, 0.2, 0.3]), 0);
        // Level 0 disagrees with level 2 by more than 0.1 + 0.3.
        assert_eq!(select_index(&[0.0, 0.3, 0.5], &[0.1, 0.2, 0.3]), 1);
        assert_eq!(select_index(&[0.0, 0.9, 0.0], &[0.1, 0.2, 0.3]), 2);
    }

    #[test]
    fn larger_bounds_never_raise_the_index() {
        let v = [0.0, 0.35, 0.8, 1.1];
        let b = [0.1, 0.2, 0.3, 0.4];
        let mut prev = usize::MAX;
        for extra in [0.0, 0.05, 0.1, 0.2, 0.5] {
            let bb: Vec<f64> = b.iter().map(|x| x + extra).collect();
            let k = select_index(&v, &bb);
            assert!(k <= prev);
            prev = k;
        }
    }

    #[test]
    fn single_level_equals_plain_construct() {
        let p = bernoulli_problem(0.1, 0.9, 5, 0.05).unwrap();
        let nested = NestedProblem::new(p.clone(), vec![p.set.clone()]).unwrap();
        let ad = build_levels(&nested, &SolverOptions::default()).unwrap();
        let plain = construct(&p, &SolverOptions::default()).unwrap();
        assert_eq!(ad.vartheta, 3.0);
        assert_relative_eq!(ad.levels[0].estimator.risk_bound, plain.risk_bound, max_relative = 1e-5);
        assert_relative_eq!(ad.guaranteed_bound(0), ad.vartheta_bound(0), max_relative = 1e-12);
    }

    #[test]
    fn demo_bounds_grow_and_selection_is_consistent() {
        let nested = interval_demo(4.0, &[0.2, 0.5, 2.0], 0.05).unwrap();
        let ad = build_levels(&nested, &SolverOptions::default()).unwrap();
        let b = ad.bounds();
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
        for k in 0..3 {
            assert!(ad.levels[k].estimator.risk_bound <= ad.levels[k].phi_star + ad.delta_prime);
            assert!(ad.guaranteed_bound(k) <= ad.vartheta_bound(k) + 1e-9);
        }
        let (k, _) = ad.select_and_estimate(&[Observation::Vector(vec![0.0])]).unwrap();
        assert_eq!(k, 0);
        let (k, v) = ad.select_and_estimate(&[Observation::Vector(vec![6.0])]).unwrap();
        assert_eq!(k, 2);
        assert_relative_eq!(v, ad.levels[2].estimator.evaluate(&[Observation::Vector(vec![6.0])]).unwrap());
    }

    #[test]
    fn equal_levels_give_equal_estimators() {
        let p = bernoulli_problem(0.2, 0.8, 4, 0.05).unwrap();
        let nested = NestedProblem::new(p.clone(), vec![p.set.clone(), p.set.clone()]).unwrap();
        let ad = build_levels(&nested, &SolverOptions::default()).unwrap();
        assert_relative_eq!(ad.levels[0].estimator.risk_bound, ad.levels[1].estimator.risk_bound, max_relative = 1e-6);
        let obs: Vec<Observation> = [1, 0, 1, 1].iter().map(|&i| Observation::Index(i)).collect();
        assert_eq!(ad.select_and_estimate(&obs).unwrap().0, 0);
    }

    #[test]
    fn rejects_non_nested_sets() {
        let p = bernoulli_problem(0.1, 0.9, 2, 0.05).unwrap();
        let sets = vec![SignalSet::interval(0.1, 0.9).unwrap(), SignalSet::interval(0.2, 0.8).unwrap()];
        assert!(NestedProblem::new(p, sets).is_err());
    }
}
