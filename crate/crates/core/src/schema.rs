//! JSON problem files.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::adaptive::NestedProblem;
use crate::error::{Error, Result};
use crate::families::{FamilySpec, Observation};
use crate::gaussian::GaussianProblem;
use crate::pet::PetModel;
use crate::problem::{AffineMap, ChannelGroup, EstimationProblem};
use crate::saddle::SolverOptions;
use crate::sets::SignalSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilyFile {
    Discrete { m: usize },
    Poisson,
    Gaussian { cov: Vec<Vec<f64>> },
    GaussianIdentity { dim: usize },
    /// One factor per entry of `maps`.
    Product { factors: Vec<FamilyFile> },
    /// Emission tomography: one Poisson bin per column of `q` (voxels x bins).
    Pet { q: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    /// Offset; zero when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub family: FamilyFile,
    /// Independent repetitions of every channel.
    #[serde(default = "one")]
    pub copies: usize,
    pub set: SignalSet,
    #[serde(default)]
    pub maps: Vec<MapFile>,
    pub g: Vec<f64>,
    pub epsilon: f64,
    /// Increasing sets for the adaptive estimate; the last must equal `set`'s role.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nested_sets: Option<Vec<SignalSet>>,
    #[serde(default)]
    pub solver: SolverFile,
}

fn one() -> usize {
    1
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("{what}: expected a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

impl FamilyFile {
    fn to_spec(&self) -> Result<FamilySpec> {
        match self {
            FamilyFile::Discrete { m } => FamilySpec::discrete(*m),
            FamilyFile::Poisson => Ok(FamilySpec::poisson()),
            FamilyFile::Gaussian { cov } => FamilySpec::gaussian(matrix(cov, "family.cov")?),
            FamilyFile::GaussianIdentity { dim } => Ok(FamilySpec::gaussian_identity(*dim)),
            FamilyFile::Product { .. } => Err(Error::InvalidInput("nested product families are not supported".into())),
            FamilyFile::Pet { .. } => Err(Error::InvalidInput("family.kind = pet cannot appear inside a product".into())),
        }
    }
}

impl ProblemFile {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
    }

    pub fn is_pet(&self) -> bool {
        matches!(self.family, FamilyFile::Pet { .. })
    }

    pub fn solver_options(&self) -> SolverOptions {
        let mut o = SolverOptions { tol: self.solver.tol, ..SolverOptions::default() };
        if let Some(m) = self.solver.max_iter {
            o.max_iter = m;
        }
        o
    }

    /// The generic problem; PET files become one Poisson group per bin.
    pub fn to_problem(&self) -> Result<EstimationProblem> {
        if self.is_pet() {
            return self.to_pet()?.to_problem();
        }
        if self.copies == 0 {
            return Err(Error::InvalidInput("copies must be at least 1".into()));
        }
        if self.maps.is_empty() {
            return Err(Error::InvalidInput("maps: at least one channel map is required".into()));
        }
        let families: Vec<FamilySpec> = match &self.family {
            FamilyFile::Product { factors } => {
                if factors.len() != self.maps.len() {
                    return Err(Error::InvalidInput(format!(
                        "family.factors has {} entries but maps has {}",
                        factors.len(),
                        self.maps.len()
                    )));
                }
                factors.iter().map(|f| f.to_spec()).collect::<Result<_>>()?
            }
            f => vec![f.to_spec()?; self.maps.len()],
        };
        let groups = families
            .into_iter()
            .zip(&self.maps)
            .enumerate()
            .map(|(i, (fam, m))| {
                let a = matrix(&m.a, &format!("maps[{i}].a"))?;
                let b = m.b.clone().unwrap_or_else(|| vec![0.0; a.nrows()]);
                let map = AffineMap::new(a, b).map_err(|e| Error::InvalidInput(format!("maps[{i}]: {e}")))?;
                ChannelGroup::new(fam, map, self.copies).map_err(|e| Error::InvalidInput(format!("maps[{i}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        EstimationProblem::new(groups, self.set.clone(), self.g.clone(), self.epsilon)
    }

    pub fn to_pet(&self) -> Result<PetModel> {
        match &self.family {
            FamilyFile::Pet { q } => PetModel::new(matrix(q, "family.q")?, self.set.clone(), self.g.clone(), self.epsilon),
            _ => Err(Error::InvalidInput("family.kind must be pet".into())),
        }
    }

    /// `omega = A x + b + xi`, `xi ~ N(0, I)`: a single identity-covariance map, one copy.
    pub fn to_gaussian(&self) -> Result<GaussianProblem> {
        let ok_family = match &self.family {
            FamilyFile::GaussianIdentity { .. } => true,
            FamilyFile::Gaussian { cov } => {
                let c = matrix(cov, "family.cov")?;
                c == DMatrix::identity(c.nrows(), c.ncols())
            }
            _ => false,
        };
        if !ok_family || self.maps.len() != 1 || self.copies != 1 {
            return Err(Error::InvalidInput(
                "the Gaussian route needs family gaussian-identity (or identity cov), one map and copies = 1".into(),
            ));
        }
        // Runs the generic consistency checks too.
        self.to_problem()?;
        let a = matrix(&self.maps[0].a, "maps[0].a")?;
        let b = self.maps[0].b.clone().unwrap_or_else(|| vec![0.0; a.nrows()]);
        GaussianProblem::with_offset(a, b, self.set.clone(), self.g.clone(), self.epsilon)
    }

    pub fn to_nested(&self) -> Result<NestedProblem> {
        let sets = self
            .nested_sets
            .clone()
            .ok_or_else(|| Error::InvalidInput("nested_sets is required for the adaptive estimate".into()))?;
        NestedProblem::new(self.to_problem()?, sets)
    }
}

/// One observation per channel, groups in order.
pub fn load_observations(path: &Path) -> Result<Vec<Observation>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}
