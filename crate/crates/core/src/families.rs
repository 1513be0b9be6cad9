//! Good density families and their test-function spaces.
//!
//! Each family exposes the log-exp-moment functional
//! `F_phi(mu) = ln E_mu[exp(phi(omega))]`, the log-likelihood ratio between two
//! parameters (always representable in the test-function space), the log
//! Hellinger affinity and a sampler. Direct products act channel by channel.
//!
//! Gaussian channels use the standard density `N(mu, Sigma)`, i.e. with the
//! factor 1/2 in the exponent, so that the log-MGF is
//! `c + w^T mu + w^T Sigma w / 2`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Strict-interior margin used for membership in the open parameter set.
pub const DOMAIN_MARGIN: f64 = 1e-12;

const SIMPLEX_SUM_TOL: f64 = 1e-9;

/// Fixed-covariance Gaussian channel, with the covariance factorized once.
#[derive(Clone, Debug)]
pub struct GaussianCov {
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianCov {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "covariance must be a nonempty square matrix, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let asym = (&cov - cov.transpose()).abs().max();
        if asym > 1e-12 * (1.0 + cov.abs().max()) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
        Ok(Self { cov, chol })
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// `Sigma^{-1} v`
    fn solve(&self, v: &[f64]) -> DVector<f64> {
        self.chol.solve(&DVector::from_column_slice(v))
    }

    /// `v^T Sigma v`
    fn quad_cov(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        v.dot(&(&self.cov * &v))
    }

    fn cov_times(&self, v: &[f64]) -> DVector<f64> {
        &self.cov * DVector::from_column_slice(v)
    }
}

impl PartialEq for GaussianCov {
    fn eq(&self, other: &Self) -> bool {
        self.cov == other.cov
    }
}

/// A good pair: parametric family together with its test-function space.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilySpec {
    /// Distributions on `{0, .., m-1}`; parameter is a probability vector.
    Discrete { m: usize },
    /// Poisson counts; parameter is the rate.
    Poisson,
    /// `N(mu, Sigma)` with known `Sigma`; parameter is the mean.
    Gaussian(GaussianCov),
    /// Independent channels.
    Product(Vec<FamilySpec>),
}

/// Test function, stored symbolically so that scaling is exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunction {
    /// Arbitrary function on a finite sample space.
    Table { values: Vec<f64> },
    /// `omega -> slope . omega + intercept` (scalar slope for Poisson).
    Affine { slope: Vec<f64>, intercept: f64 },
    /// Sum of per-channel functions.
    Product { factors: Vec<TestFunction> },
}

/// A single draw from a family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Observation {
    Index(usize),
    Count(u64),
    Vector(Vec<f64>),
    Product(Vec<Observation>),
}

impl TestFunction {
    pub fn affine(slope: Vec<f64>, intercept: f64) -> Self {
        TestFunction::Affine { slope, intercept }
    }

    pub fn table(values: Vec<f64>) -> Self {
        TestFunction::Table { values }
    }

    pub fn scale(&self, t: f64) -> TestFunction {
        match self {
            TestFunction::Table { values } => TestFunction::Table {
                values: values.iter().map(|v| t * v).collect(),
            },
            TestFunction::Affine { slope, intercept } => TestFunction::Affine {
                slope: slope.iter().map(|v| t * v).collect(),
                intercept: t * intercept,
            },
            TestFunction::Product { factors } => TestFunction::Product {
                factors: factors.iter().map(|f| f.scale(t)).collect(),
            },
        }
    }

    pub fn add(&self, other: &TestFunction) -> Result<TestFunction> {
        use TestFunction::*;
        match (self, other) {
            (Table { values: a }, Table { values: b }) => {
                check_dim("table test function", a.len(), b.len())?;
                Ok(Table {
                    values: a.iter().zip(b).map(|(x, y)| x + y).collect(),
                })
            }
            (
                Affine {
                    slope: a,
                    intercept: ia,
                },
                Affine {
                    slope: b,
                    intercept: ib,
                },
            ) => {
                check_dim("affine test function", a.len(), b.len())?;
                Ok(Affine {
                    slope: a.iter().zip(b).map(|(x, y)| x + y).collect(),
                    intercept: ia + ib,
                })
            }
            (Product { factors: a }, Product { factors: b }) => {
                check_dim("product test function", a.len(), b.len())?;
                Ok(Product {
                    factors: a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| x.add(y))
                        .collect::<Result<_>>()?,
                })
            }
            _ => Err(Error::InvalidInput(
                "cannot add test functions of different kinds".into(),
            )),
        }
    }

    /// Add a constant to the function.
    pub fn shift(&self, c: f64) -> TestFunction {
        match self {
            TestFunction::Table { values } => TestFunction::Table {
                values: values.iter().map(|v| v + c).collect(),
            },
            TestFunction::Affine { slope, intercept } => TestFunction::Affine {
                slope: slope.clone(),
                intercept: intercept + c,
            },
            TestFunction::Product { factors } => {
                let mut factors = factors.clone();
                if let Some(first) = factors.first_mut() {
                    *first = first.shift(c);
                }
                TestFunction::Product { factors }
            }
        }
    }

    pub fn evaluate(&self, obs: &Observation) -> Result<f64> {
        match (self, obs) {
            (TestFunction::Table { values }, Observation::Index(i)) => {
                values.get(*i).copied().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "category {i} out of range for a table of size {}",
                        values.len()
                    ))
                })
            }
            (TestFunction::Affine { slope, intercept }, Observation::Count(k)) => {
                check_dim("poisson slope", 1, slope.len())?;
                Ok(slope[0] * *k as f64 + intercept)
            }
            (TestFunction::Affine { slope, intercept }, Observation::Vector(w)) => {
                check_dim("gaussian observation", slope.len(), w.len())?;
                Ok(dot(slope, w) + intercept)
            }
            (TestFunction::Product { factors }, Observation::Product(parts)) => {
                check_dim("product observation", factors.len(), parts.len())?;
                factors
                    .iter()
                    .zip(parts)
                    .map(|(f, o)| f.evaluate(o))
                    .sum()
            }
            _ => Err(Error::InvalidInput(
                "observation type does not match the test function".into(),
            )),
        }
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        match self {
            TestFunction::Table { values } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            TestFunction::Affine { slope, intercept } => slope
                .iter()
                .fold(intercept.abs(), |m, v| m.max(v.abs())),
            TestFunction::Product { factors } => {
                factors.iter().fold(0.0, |m, f| m.max(f.max_abs()))
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln sum_i exp(a_i) w_i` for nonnegative weights, stabilized.
fn log_sum_exp_weighted(a: &[f64], w: &[f64]) -> f64 {
    let m = a
        .iter()
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(&ai, _)| ai)
        .fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = a
        .iter()
        .zip(w)
        .map(|(&ai, &wi)| wi * (ai - m).exp())
        .sum();
    m + s.ln()
}

/// Tilted probabilities `w_i e^{a_i} / sum_j w_j e^{a_j}`.
fn tilted(a: &[f64], w: &[f64]) -> Vec<f64> {
    let m = a.iter().fold(f64::NEG_INFINITY, |x, &y| x.max(y));
    let e: Vec<f64> = a
        .iter()
        .zip(w)
        .map(|(&ai, &wi)| wi * (ai - m).exp())
        .collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

impl FamilySpec {
    pub fn discrete(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!(
                "discrete family needs at least 2 categories, got {m}"
            )));
        }
        Ok(FamilySpec::Discrete { m })
    }

    pub fn poisson() -> Self {
        FamilySpec::Poisson
    }

    pub fn gaussian(cov: DMatrix<f64>) -> Result<Self> {
        Ok(FamilySpec::Gaussian(GaussianCov::new(cov)?))
    }

    pub fn gaussian_identity(k: usize) -> Self {
        FamilySpec::Gaussian(GaussianCov::identity(k))
    }

    pub fn product(factors: Vec<FamilySpec>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("product family with no factors".into()));
        }
        Ok(FamilySpec::Product(factors))
    }

    /// Bernoulli observations as a two-category discrete family.
    pub fn bernoulli() -> Self {
        FamilySpec::Discrete { m: 2 }
    }

    /// Dimension of the parameter `mu`.
    pub fn param_dim(&self) -> usize {
        match self {
            FamilySpec::Discrete { m } => *m,
            FamilySpec::Poisson => 1,
            FamilySpec::Gaussian(g) => g.dim(),
            FamilySpec::Product(fs) => fs.iter().map(|f| f.param_dim()).sum(),
        }
    }

    /// Number of coordinates of a test function modulo additive constants.
    pub fn free_dim(&self) -> usize {
        match self {
            FamilySpec::Discrete { m } => m - 1,
            FamilySpec::Poisson => 1,
            FamilySpec::Gaussian(g) => g.dim(),
            FamilySpec::Product(fs) => fs.iter().map(|f| f.free_dim()).sum(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            FamilySpec::Discrete { .. } => "discrete",
            FamilySpec::Poisson => "poisson",
            FamilySpec::Gaussian(_) => "gaussian",
            FamilySpec::Product(_) => "product",
        }
    }

    /// True when `mu -> F_phi(mu)` is affine for every `phi`.
    pub fn lem_is_affine_in_mu(&self) -> bool {
        match self {
            FamilySpec::Discrete { .. } => false,
            FamilySpec::Poisson | FamilySpec::Gaussian(_) => true,
            FamilySpec::Product(fs) => fs.iter().all(|f| f.lem_is_affine_in_mu()),
        }
    }

    pub fn zero_phi(&self) -> TestFunction {
        match self {
            FamilySpec::Discrete { m } => TestFunction::table(vec![0.0; *m]),
            FamilySpec::Poisson => TestFunction::affine(vec![0.0], 0.0),
            FamilySpec::Gaussian(g) => TestFunction::affine(vec![0.0; g.dim()], 0.0),
            FamilySpec::Product(fs) => TestFunction::Product {
                factors: fs.iter().map(|f| f.zero_phi()).collect(),
            },
        }
    }

    /// Checks that `mu` lies in the open parameter set.
    pub fn check_param(&self, mu: &[f64]) -> Result<()> {
        check_dim("parameter", self.param_dim(), mu.len())?;
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfDomain("non-finite parameter".into()));
        }
        match self {
            FamilySpec::Discrete { .. } => {
                if let Some(v) = mu.iter().find(|&&v| v < DOMAIN_MARGIN) {
                    return Err(Error::OutOfDomain(format!(
                        "discrete probabilities must be positive, got {v:e}"
                    )));
                }
                let s: f64 = mu.iter().sum();
                if (s - 1.0).abs() > SIMPLEX_SUM_TOL * mu.len() as f64 {
                    return Err(Error::OutOfDomain(format!(
                        "discrete probabilities must sum to 1, got {s}"
                    )));
                }
                Ok(())
            }
            FamilySpec::Poisson => {
                if mu[0] < DOMAIN_MARGIN {
                    Err(Error::OutOfDomain(format!(
                        "poisson rate must be positive, got {:e}",
                        mu[0]
                    )))
                } else {
                    Ok(())
                }
            }
            FamilySpec::Gaussian(_) => Ok(()),
            FamilySpec::Product(fs) => {
                let mut off = 0;
                for f in fs {
                    let d = f.param_dim();
                    f.check_param(&mu[off..off + d])?;
                    off += d;
                }
                Ok(())
            }
        }
    }

    /// Checks that `phi` belongs to this family's test-function space.
    pub fn check_phi(&self, phi: &TestFunction) -> Result<()> {
        match (self, phi) {
            (FamilySpec::Discrete { m }, TestFunction::Table { values }) => {
                check_dim("discrete test function", *m, values.len())
            }
            (FamilySpec::Poisson, TestFunction::Affine { slope, .. }) => {
                check_dim("poisson test function slope", 1, slope.len())
            }
            (FamilySpec::Gaussian(g), TestFunction::Affine { slope, .. }) => {
                check_dim("gaussian test function slope", g.dim(), slope.len())
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                check_dim("product test function", fs.len(), factors.len())?;
                fs.iter().zip(factors).try_for_each(|(f, p)| f.check_phi(p))
            }
            _ => Err(Error::InvalidInput(format!(
                "test function kind does not match a {} family",
                self.kind_name()
            ))),
        }
    }

    /// Log-exp-moment functional `F_phi(mu)`.
    pub fn lem(&self, phi: &TestFunction, mu: &[f64]) -> Result<f64> {
        self.check_phi(phi)?;
        self.check_param(mu)?;
        Ok(self.lem_raw(phi, mu))
    }

    pub(crate) fn lem_raw(&self, phi: &TestFunction, mu: &[f64]) -> f64 {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => {
                log_sum_exp_weighted(values, mu)
            }
            (FamilySpec::Poisson, TestFunction::Affine { slope, intercept }) => {
                intercept - mu[0] + mu[0] * slope[0].exp()
            }
            (FamilySpec::Gaussian(g), TestFunction::Affine { slope, intercept }) => {
                intercept + dot(slope, mu) + 0.5 * g.quad_cov(slope)
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                let mut off = 0;
                let mut total = 0.0;
                for (f, p) in fs.iter().zip(factors) {
                    let d = f.param_dim();
                    total += f.lem_raw(p, &mu[off..off + d]);
                    off += d;
                }
                total
            }
            _ => unreachable!("test function validated against family"),
        }
    }

    /// Gradient of `F_phi` with respect to `mu`.
    pub fn lem_grad_mu(&self, phi: &TestFunction, mu: &[f64]) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        self.check_param(mu)?;
        let mut out = vec![0.0; mu.len()];
        self.lem_grad_mu_raw(phi, mu, &mut out);
        Ok(out)
    }

    pub(crate) fn lem_grad_mu_raw(&self, phi: &TestFunction, mu: &[f64], out: &mut [f64]) {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => {
                // e^{v_i} / sum_j e^{v_j} mu_j
                let m = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let s: f64 = values
                    .iter()
                    .zip(mu)
                    .map(|(v, w)| w * (v - m).exp())
                    .sum();
                for (o, v) in out.iter_mut().zip(values) {
                    *o = (v - m).exp() / s;
                }
            }
            (FamilySpec::Poisson, TestFunction::Affine { slope, .. }) => {
                out[0] = slope[0].exp() - 1.0;
            }
            (FamilySpec::Gaussian(_), TestFunction::Affine { slope, .. }) => {
                out.copy_from_slice(slope);
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                let mut off = 0;
                for (f, p) in fs.iter().zip(factors) {
                    let d = f.param_dim();
                    f.lem_grad_mu_raw(p, &mu[off..off + d], &mut out[off..off + d]);
                    off += d;
                }
            }
            _ => unreachable!("test function validated against family"),
        }
    }

    /// Gradient of `F_phi(mu)` with respect to the free coordinates of `phi`
    /// (see [`FamilySpec::phi_from_free`]), written into `out`.
    pub(crate) fn lem_grad_free_raw(&self, phi: &TestFunction, mu: &[f64], out: &mut [f64]) {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => {
                let w = tilted(values, mu);
                out.copy_from_slice(&w[1..]);
            }
            (FamilySpec::Poisson, TestFunction::Affine { slope, .. }) => {
                out[0] = mu[0] * slope[0].exp();
            }
            (FamilySpec::Gaussian(g), TestFunction::Affine { slope, .. }) => {
                let s = g.cov_times(slope);
                for i in 0..out.len() {
                    out[i] = mu[i] + s[i];
                }
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                let (mut off_mu, mut off_free) = (0, 0);
                for (f, p) in fs.iter().zip(factors) {
                    let (d, k) = (f.param_dim(), f.free_dim());
                    f.lem_grad_free_raw(
                        p,
                        &mu[off_mu..off_mu + d],
                        &mut out[off_free..off_free + k],
                    );
                    off_mu += d;
                    off_free += k;
                }
            }
            _ => unreachable!("test function validated against family"),
        }
    }

    /// `d/dt F_{t phi}(mu)` at `t = 1`.
    pub(crate) fn lem_radial_deriv_raw(&self, phi: &TestFunction, mu: &[f64]) -> f64 {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => {
                let w = tilted(values, mu);
                dot(&w, values)
            }
            (FamilySpec::Poisson, TestFunction::Affine { slope, intercept }) => {
                slope[0] * mu[0] * slope[0].exp() + intercept
            }
            (FamilySpec::Gaussian(g), TestFunction::Affine { slope, intercept }) => {
                intercept + dot(slope, mu) + g.quad_cov(slope)
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                let mut off = 0;
                let mut total = 0.0;
                for (f, p) in fs.iter().zip(factors) {
                    let d = f.param_dim();
                    total += f.lem_radial_deriv_raw(p, &mu[off..off + d]);
                    off += d;
                }
                total
            }
            _ => unreachable!("test function validated against family"),
        }
    }

    /// Test function with the given free coordinates: zero intercepts and
    /// first table entry pinned to zero.
    pub fn phi_from_free(&self, theta: &[f64]) -> TestFunction {
        match self {
            FamilySpec::Discrete { m } => {
                let mut values = Vec::with_capacity(*m);
                values.push(0.0);
                values.extend_from_slice(&theta[..m - 1]);
                TestFunction::table(values)
            }
            FamilySpec::Poisson => TestFunction::affine(vec![theta[0]], 0.0),
            FamilySpec::Gaussian(g) => TestFunction::affine(theta[..g.dim()].to_vec(), 0.0),
            FamilySpec::Product(fs) => {
                let mut off = 0;
                let factors = fs
                    .iter()
                    .map(|f| {
                        let k = f.free_dim();
                        let p = f.phi_from_free(&theta[off..off + k]);
                        off += k;
                        p
                    })
                    .collect();
                TestFunction::Product { factors }
            }
        }
    }

    /// Free coordinates of `phi`, dropping its additive constant.
    pub fn free_from_phi(&self, phi: &TestFunction) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        let mut out = Vec::with_capacity(self.free_dim());
        self.push_free(phi, &mut out);
        Ok(out)
    }

    fn push_free(&self, phi: &TestFunction, out: &mut Vec<f64>) {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => {
                out.extend(values[1..].iter().map(|v| v - values[0]));
            }
            (FamilySpec::Poisson | FamilySpec::Gaussian(_), TestFunction::Affine { slope, .. }) => {
                out.extend_from_slice(slope);
            }
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => {
                for (f, p) in fs.iter().zip(factors) {
                    f.push_free(p, out);
                }
            }
            _ => unreachable!("test function validated against family"),
        }
    }

    /// Additive constant removed by [`FamilySpec::free_from_phi`].
    pub fn phi_constant(&self, phi: &TestFunction) -> f64 {
        match (self, phi) {
            (FamilySpec::Discrete { .. }, TestFunction::Table { values }) => values[0],
            (_, TestFunction::Affine { intercept, .. }) => *intercept,
            (FamilySpec::Product(fs), TestFunction::Product { factors }) => fs
                .iter()
                .zip(factors)
                .map(|(f, p)| f.phi_constant(p))
                .sum(),
            _ => 0.0,
        }
    }

    /// `ln(p_mu / p_nu)` as an element of the test-function space.
    pub fn log_likelihood_ratio(&self, mu: &[f64], nu: &[f64]) -> Result<TestFunction> {
        self.check_param(mu)?;
        self.check_param(nu)?;
        Ok(self.llr_raw(mu, nu))
    }

    pub(crate) fn llr_raw(&self, mu: &[f64], nu: &[f64]) -> TestFunction {
        match self {
            FamilySpec::Discrete { .. } => {
                TestFunction::table(mu.iter().zip(nu).map(|(a, b)| (a / b).ln()).collect())
            }
            FamilySpec::Poisson => {
                TestFunction::affine(vec![(mu[0] / nu[0]).ln()], nu[0] - mu[0])
            }
            FamilySpec::Gaussian(g) => {
                // (mu - nu)^T S^{-1} w - mu^T S^{-1} mu / 2 + nu^T S^{-1} nu / 2
                let pm = g.solve(mu);
                let pn = g.solve(nu);
                let slope: Vec<f64> = pm.iter().zip(pn.iter()).map(|(a, b)| a - b).collect();
                let intercept = 0.5 * (dot(nu, pn.as_slice()) - dot(mu, pm.as_slice()));
                TestFunction::affine(slope, intercept)
            }
            FamilySpec::Product(fs) => {
                let mut off = 0;
                let factors = fs
                    .iter()
                    .map(|f| {
                        let d = f.param_dim();
                        let p = f.llr_raw(&mu[off..off + d], &nu[off..off + d]);
                        off += d;
                        p
                    })
                    .collect();
                TestFunction::Product { factors }
            }
        }
    }

    /// `ln AffH(mu, nu) = ln int sqrt(p_mu p_nu)`.
    pub fn hellinger_affinity_log(&self, mu: &[f64], nu: &[f64]) -> Result<f64> {
        self.check_param(mu)?;
        self.check_param(nu)?;
        Ok(self.affinity_log_raw(mu, nu))
    }

    pub(crate) fn affinity_log_raw(&self, mu: &[f64], nu: &[f64]) -> f64 {
        match self {
            FamilySpec::Discrete { .. } => {
                let s: f64 = mu.iter().zip(nu).map(|(a, b)| (a * b).sqrt()).sum();
                s.ln()
            }
            FamilySpec::Poisson => {
                let d = mu[0].sqrt() - nu[0].sqrt();
                -0.5 * d * d
            }
            FamilySpec::Gaussian(g) => {
                let d: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a - b).collect();
                -0.125 * dot(&d, g.solve(&d).as_slice())
            }
            FamilySpec::Product(fs) => {
                let mut off = 0;
                let mut total = 0.0;
                for f in fs {
                    let d = f.param_dim();
                    total += f.affinity_log_raw(&mu[off..off + d], &nu[off..off + d]);
                    off += d;
                }
                total
            }
        }
    }

    /// Gradients of `ln AffH` with respect to `mu` and `nu`.
    pub(crate) fn affinity_log_grad_raw(
        &self,
        mu: &[f64],
        nu: &[f64],
        gmu: &mut [f64],
        gnu: &mut [f64],
    ) {
        match self {
            FamilySpec::Discrete { .. } => {
                let s: f64 = mu.iter().zip(nu).map(|(a, b)| (a * b).sqrt()).sum();
                for i in 0..mu.len() {
                    let r = (nu[i] / mu[i]).sqrt();
                    gmu[i] = 0.5 * r / s;
                    gnu[i] = 0.5 / (r * s);
                }
            }
            FamilySpec::Poisson => {
                let (a, b) = (mu[0].sqrt(), nu[0].sqrt());
                gmu[0] = -0.5 * (a - b) / a;
                gnu[0] = 0.5 * (a - b) / b;
            }
            FamilySpec::Gaussian(g) => {
                let d: Vec<f64> = mu.iter().zip(nu).map(|(a, b)| a - b).collect();
                let p = g.solve(&d);
                for i in 0..d.len() {
                    gmu[i] = -0.25 * p[i];
                    gnu[i] = 0.25 * p[i];
                }
            }
            FamilySpec::Product(fs) => {
                let mut off = 0;
                for f in fs {
                    let d = f.param_dim();
                    let r = off..off + d;
                    f.affinity_log_grad_raw(
                        &mu[r.clone()],
                        &nu[r.clone()],
                        &mut gmu[r.clone()],
                        &mut gnu[r],
                    );
                    off += d;
                }
            }
        }
    }

    /// One draw from `p_mu`.
    pub fn sample<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Result<Observation> {
        self.check_param(mu)?;
        Ok(self.sample_raw(mu, rng))
    }

    pub(crate) fn sample_raw<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Observation {
        match self {
            FamilySpec::Discrete { .. } => {
                let u: f64 = rng.random::<f64>() * mu.iter().sum::<f64>();
                let mut acc = 0.0;
                for (i, p) in mu.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Observation::Index(i);
                    }
                }
                Observation::Index(mu.len() - 1)
            }
            FamilySpec::Poisson => Observation::Count(sample_poisson(mu[0], rng)),
            FamilySpec::Gaussian(g) => Observation::Vector(sample_gaussian(g, mu, 1.0, rng)),
            FamilySpec::Product(fs) => {
                let mut off = 0;
                Observation::Product(
                    fs.iter()
                        .map(|f| {
                            let d = f.param_dim();
                            let o = f.sample_raw(&mu[off..off + d], rng);
                            off += d;
                            o
                        })
                        .collect(),
                )
            }
        }
    }
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("positive finite rate");
    d.sample(rng) as u64
}

/// `mean + sqrt(scale) * L z` with `Sigma = L L^T`.
pub(crate) fn sample_gaussian<R: Rng + ?Sized>(
    g: &GaussianCov,
    mean: &[f64],
    scale: f64,
    rng: &mut R,
) -> Vec<f64> {
    let k = g.dim();
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lz = g.chol.l() * z;
    let s = scale.sqrt();
    mean.iter().zip(lz.iter()).map(|(m, v)| m + s * v).collect()
}

/// One reproducible draw from `p_mu` under a fixed seed.
pub fn sample(spec: &FamilySpec, mu: &[f64], seed: u64) -> Result<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    spec.sample(mu, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn lem_closed_forms() {
        let p = FamilySpec::poisson();
        assert_eq!(p.lem(&TestFunction::affine(vec![0.0], 0.0), &[3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            p.lem(&TestFunction::affine(vec![LN_2], 0.0), &[1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let g = FamilySpec::gaussian_identity(1);
        assert_abs_diff_eq!(
            g.lem(&TestFunction::affine(vec![1.0], 0.0), &[0.0]).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let d = FamilySpec::discrete(2).unwrap();
        assert_abs_diff_eq!(
            d.lem(&TestFunction::table(vec![3f64.ln(), 0.0]), &[0.5, 0.5])
                .unwrap(),
            LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn lem_gradients() {
        let p = FamilySpec::poisson();
        assert_eq!(
            p.lem_grad_mu(&TestFunction::affine(vec![0.0], 0.0), &[2.0])
                .unwrap(),
            vec![0.0]
        );
        assert_abs_diff_eq!(
            p.lem_grad_mu(&TestFunction::affine(vec![LN_2], 0.0), &[2.0])
                .unwrap()[0],
            1.0,
            epsilon = 1e-15
        );
        let d = FamilySpec::discrete(2).unwrap();
        let gr = d
            .lem_grad_mu(&TestFunction::table(vec![0.0, 0.0]), &[0.3, 0.7])
            .unwrap();
        assert_abs_diff_eq!(gr[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gr[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let d = FamilySpec::discrete(3).unwrap();
        let err = d.lem(&TestFunction::table(vec![0.0, 0.0]), &[0.2, 0.3, 0.5]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = d.lem(&TestFunction::table(vec![0.0; 3]), &[0.5, 0.5]);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = d.lem(&TestFunction::affine(vec![0.0], 0.0), &[0.2, 0.3, 0.5]);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn domain_is_open() {
        let p = FamilySpec::poisson();
        assert!(matches!(p.check_param(&[0.0]), Err(Error::OutOfDomain(_))));
        assert!(matches!(p.check_param(&[1e-13]), Err(Error::OutOfDomain(_))));
        let d = FamilySpec::discrete(2).unwrap();
        assert!(d.check_param(&[0.4, 0.6]).is_ok());
        assert!(matches!(d.check_param(&[0.0, 1.0]), Err(Error::OutOfDomain(_))));
        assert!(matches!(d.check_param(&[0.5, 0.6]), Err(Error::OutOfDomain(_))));
    }

    #[test]
    fn log_likelihood_ratios() {
        let p = FamilySpec::poisson();
        let phi = p.log_likelihood_ratio(&[2.0], &[1.0]).unwrap();
        match phi {
            TestFunction::Affine { slope, intercept } => {
                assert_abs_diff_eq!(slope[0], LN_2, epsilon = 1e-15);
                assert_abs_diff_eq!(intercept, -1.0, epsilon = 1e-15);
            }
            _ => panic!("poisson ratio must be affine"),
        }
        let d = FamilySpec::discrete(2).unwrap();
        let phi = d.log_likelihood_ratio(&[0.6, 0.4], &[0.5, 0.5]).unwrap();
        assert_eq!(phi, TestFunction::table(vec![1.2f64.ln(), 0.8f64.ln()]));
        for spec in [p, d, FamilySpec::gaussian_identity(2)] {
            let mu = vec![0.5; spec.param_dim()];
            let phi = spec.log_likelihood_ratio(&mu, &mu).unwrap();
            assert_eq!(phi.max_abs(), 0.0);
        }
    }

    #[test]
    fn gaussian_ratio_matches_density() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let g = FamilySpec::gaussian(cov.clone()).unwrap();
        let (mu, nu) = ([0.7, -0.2], [-0.4, 0.5]);
        let phi = g.log_likelihood_ratio(&mu, &nu).unwrap();
        let prec = cov.try_inverse().unwrap();
        let logp = |m: &[f64], w: &[f64]| {
            let d = DVector::from_vec(vec![w[0] - m[0], w[1] - m[1]]);
            -0.5 * d.dot(&(&prec * &d))
        };
        for w in [[0.0, 0.0], [1.3, -2.0], [-0.5, 0.9]] {
            let direct = logp(&mu, &w) - logp(&nu, &w);
            let via = phi.evaluate(&Observation::Vector(w.to_vec())).unwrap();
            assert_abs_diff_eq!(direct, via, epsilon = 1e-13);
        }
    }

    #[test]
    fn affinity_of_identical_laws_is_one() {
        for spec in [
            FamilySpec::poisson(),
            FamilySpec::discrete(3).unwrap(),
            FamilySpec::gaussian_identity(2),
        ] {
            let mu: Vec<f64> = vec![1.0 / spec.param_dim() as f64; spec.param_dim()];
            assert_abs_diff_eq!(
                spec.hellinger_affinity_log(&mu, &mu).unwrap(),
                0.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn free_coordinates_round_trip() {
        let spec = FamilySpec::product(vec![
            FamilySpec::discrete(3).unwrap(),
            FamilySpec::poisson(),
            FamilySpec::gaussian_identity(2),
        ])
        .unwrap();
        let theta = vec![0.1, -0.2, 0.3, 0.4, -0.5];
        let phi = spec.phi_from_free(&theta);
        assert_eq!(spec.free_from_phi(&phi).unwrap(), theta);
        let shifted = phi.shift(2.5);
        for (a, b) in spec.free_from_phi(&shifted).unwrap().iter().zip(&theta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(spec.phi_constant(&shifted), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn near_degenerate_discrete_sampler() {
        let d = FamilySpec::discrete(2).unwrap();
        let mu = [1.0 - 1e-12, 1e-12];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| d.sample(&mu, &mut rng).unwrap() == Observation::Index(0))
            .count();
        assert!(hits as f64 / n as f64 >= 1.0 - 1e-6);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let g = FamilySpec::gaussian_identity(3);
        let a = sample(&g, &[0.0, 1.0, 2.0], 42).unwrap();
        let b = sample(&g, &[0.0, 1.0, 2.0], 42).unwrap();
        assert_eq!(a, b);
    }
}
