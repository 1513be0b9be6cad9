//! Estimation problems: signal set, affine observation maps, functional.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::families::{FamilySpec, DOMAIN_MARGIN};
use crate::sets::SignalSet;

/// `x -> A x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
}

impl AffineMap {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        check_dim("affine map offset", a.nrows(), b.len())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("affine map has non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    pub fn linear(a: DMatrix<f64>) -> Self {
        let b = vec![0.0; a.nrows()];
        Self { a, b }
    }

    pub fn from_rows(rows: &[Vec<f64>], b: Vec<f64>) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        for r in rows {
            check_dim("affine map row", n, r.len())?;
        }
        let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        Self::new(a, b)
    }

    pub fn out_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for (j, &xj) in x.iter().enumerate().take(self.a.ncols()) {
            if xj != 0.0 {
                for (i, o) in out.iter_mut().enumerate() {
                    *o += self.a[(i, j)] * xj;
                }
            }
        }
        out
    }

    /// `A^T v`
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        (0..self.a.ncols())
            .map(|j| (0..self.a.nrows()).map(|i| self.a[(i, j)] * v[i]).sum())
            .collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.a.nrows())
            .map(|i| self.a.row(i).iter().copied().collect())
            .collect()
    }
}

/// Channels that are i.i.d. copies of one another and share a test function.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGroup {
    pub family: FamilySpec,
    pub map: AffineMap,
    pub copies: usize,
}

impl ChannelGroup {
    pub fn new(family: FamilySpec, map: AffineMap, copies: usize) -> Result<Self> {
        if matches!(family, FamilySpec::Product(_)) {
            return Err(Error::InvalidInput(
                "channel groups take a single family; list product factors as separate groups".into(),
            ));
        }
        if copies == 0 {
            return Err(Error::InvalidInput("channel group with zero copies".into()));
        }
        check_dim("affine map output", family.param_dim(), map.out_dim())?;
        Ok(Self { family, map, copies })
    }
}

/// Signal set, observation channels, linear functional and confidence level.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimationProblem {
    pub groups: Vec<ChannelGroup>,
    pub set: SignalSet,
    pub g: Vec<f64>,
    pub epsilon: f64,
}

type GroupDigest<'a> = (String, Vec<Vec<f64>>, &'a [f64], usize);

/// Summary used for fingerprints and reports.
#[derive(Serialize)]
struct ProblemDigest<'a> {
    set: &'a SignalSet,
    g: &'a [f64],
    epsilon: f64,
    /// Family, rows of `A`, `b`, copies.
    groups: Vec<GroupDigest<'a>>,
}

impl EstimationProblem {
    pub fn new(groups: Vec<ChannelGroup>, set: SignalSet, g: Vec<f64>, epsilon: f64) -> Result<Self> {
        let p = Self {
            groups,
            set,
            g,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks dimensions, the confidence range and `A(X) in M`.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
            return Err(Error::InvalidInput(format!(
                "epsilon must lie in (0, 1/4), got {}",
                self.epsilon
            )));
        }
        self.validate_structure()
    }

    /// Everything in [`EstimationProblem::validate`] except the range of epsilon.
    pub fn validate_structure(&self) -> Result<()> {
        self.set.validate()?;
        let n = self.set.dim();
        check_dim("functional g", n, self.g.len())?;
        if self.groups.is_empty() {
            return Err(Error::InvalidInput("problem has no observation channels".into()));
        }
        for (k, grp) in self.groups.iter().enumerate() {
            check_dim(&format!("map of channel group {k}"), n, grp.map.in_dim())?;
            check_image_in_domain(&grp.family, &grp.map, &self.set)
                .map_err(|e| Error::InvalidInput(format!("channel group {k}: {e}")))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn channel_count(&self) -> usize {
        self.groups.iter().map(|g| g.copies).sum()
    }

    pub fn with_set(&self, set: SignalSet) -> Result<Self> {
        let p = Self {
            set,
            ..self.clone()
        };
        p.validate_structure()?;
        Ok(p)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            ..self.clone()
        };
        p.validate()?;
        Ok(p)
    }

    /// Same problem with every channel in its own group.
    pub fn untied(&self) -> Self {
        let groups = self
            .groups
            .iter()
            .flat_map(|g| {
                std::iter::repeat_n(
                    ChannelGroup {
                        copies: 1,
                        ..g.clone()
                    },
                    g.copies,
                )
            })
            .collect();
        Self {
            groups,
            ..self.clone()
        }
    }

    /// Parameter of each group at signal `x`.
    pub fn params(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.groups.iter().map(|g| g.map.apply(x)).collect()
    }

    /// Total free dimension of the per-group test functions.
    pub fn free_dim(&self) -> usize {
        self.groups.iter().map(|g| g.family.free_dim()).sum()
    }

    /// Hex SHA-256 of a canonical serialization.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = ProblemDigest {
            set: &self.set,
            g: &self.g,
            epsilon: self.epsilon,
            groups: self
                .groups
                .iter()
                .map(|g| {
                    let fam = match &g.family {
                        FamilySpec::Gaussian(c) => format!("gaussian:{:?}", c.cov().as_slice()),
                        other => format!("{other:?}"),
                    };
                    (fam, g.map.rows(), g.map.b.as_slice(), g.copies)
                })
                .collect(),
        };
        let bytes = serde_json::to_vec(&digest).expect("digest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Verifies `A(X) in M` for one channel.
pub(crate) fn check_image_in_domain(family: &FamilySpec, map: &AffineMap, set: &SignalSet) -> Result<()> {
    match family {
        FamilySpec::Gaussian(_) => Ok(()),
        FamilySpec::Poisson | FamilySpec::Discrete { .. } => {
            // Coordinatewise minimum over X of (A x + b)_i.
            for (i, row) in map.rows().iter().enumerate() {
                let neg: Vec<f64> = row.iter().map(|v| -v).collect();
                let min = -set.lin_max_raw(&neg).value + map.b[i];
                if !(min >= DOMAIN_MARGIN) {
                    return Err(Error::OutOfDomain(format!(
                        "coordinate {i} of A x + b reaches {min:e} on X; it must stay positive"
                    )));
                }
            }
            if let FamilySpec::Discrete { .. } = family {
                let verts = set.vertices();
                for v in verts.iter().take(4096) {
                    let s: f64 = map.apply(v).iter().sum();
                    if (s - 1.0).abs() > 1e-9 {
                        return Err(Error::OutOfDomain(format!(
                            "A x + b must be a probability vector on X; sums to {s} at a vertex"
                        )));
                    }
                }
            }
            Ok(())
        }
        FamilySpec::Product(_) => Err(Error::InvalidInput("nested product family".into())),
    }
}

/// Bernoulli observations of `x in [lo, hi]` with `copies` i.i.d. draws.
pub fn bernoulli_problem(lo: f64, hi: f64, copies: usize, epsilon: f64) -> Result<EstimationProblem> {
    let map = AffineMap::from_rows(&[vec![-1.0], vec![1.0]], vec![1.0, 0.0])?;
    let group = ChannelGroup::new(FamilySpec::bernoulli(), map, copies)?;
    EstimationProblem::new(vec![group], SignalSet::interval(lo, hi)?, vec![1.0], epsilon)
}

/// Observation `omega = A x + xi`, `xi ~ N(0, I)`, one group per row of `A`.
pub fn gaussian_rows_problem(a: &DMatrix<f64>, set: SignalSet, g: Vec<f64>, epsilon: f64) -> Result<EstimationProblem> {
    let groups = (0..a.nrows())
        .map(|i| {
            let row = DMatrix::from_fn(1, a.ncols(), |_, j| a[(i, j)]);
            ChannelGroup::new(FamilySpec::gaussian_identity(1), AffineMap::linear(row), 1)
        })
        .collect::<Result<Vec<_>>>()?;
    EstimationProblem::new(groups, set, g, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_problem_validates() {
        let p = bernoulli_problem((-16f64).exp(), 1.0 - (-16f64).exp(), 10, 0.05).unwrap();
        assert_eq!(p.channel_count(), 10);
        assert_eq!(p.untied().groups.len(), 10);
    }

    #[test]
    fn epsilon_range_enforced() {
        let err = bernoulli_problem(0.1, 0.9, 1, 0.3).unwrap_err();
        assert!(err.to_string().contains("(0, 1/4)"));
    }

    #[test]
    fn image_outside_domain_rejected() {
        // Poisson rate x on [-1, 1] is not positive.
        let grp = ChannelGroup::new(
            FamilySpec::poisson(),
            AffineMap::linear(DMatrix::from_element(1, 1, 1.0)),
            1,
        )
        .unwrap();
        let err = EstimationProblem::new(vec![grp], SignalSet::interval(-1.0, 1.0).unwrap(), vec![1.0], 0.05);
        assert!(err.is_err());
        // Bernoulli parameter must stay inside (0, 1).
        assert!(bernoulli_problem(0.0, 0.5, 1, 0.05).is_err());
    }

    #[test]
    fn fingerprint_is_stable_and_sensitive() {
        let a = bernoulli_problem(0.1, 0.9, 5, 0.05).unwrap();
        let b = bernoulli_problem(0.1, 0.9, 5, 0.05).unwrap();
        let c = bernoulli_problem(0.1, 0.9, 6, 0.05).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
