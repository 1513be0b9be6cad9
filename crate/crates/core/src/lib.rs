//! Near-minimax affine estimation of linear functionals.
//!
//! ```
//! use minimax_affine::estimator::construct;
//! use minimax_affine::problem::bernoulli_problem;
//! use minimax_affine::saddle::SolverOptions;
//!
//! let problem = bernoulli_problem(0.05, 0.95, 20, 0.05)?;
//! let est = construct(&problem, &SolverOptions::default())?;
//! assert!(est.certified && est.risk_bound < 0.45);
//! # Ok::<(), minimax_affine::Error>(())
//! ```

// Negated float comparisons are used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod cli;
mod ellipsoid;
pub mod error;
pub mod estimator;
pub mod families;
pub mod gaussian;
pub mod inner;
pub mod problem;
pub mod pet;
pub mod risk;
pub mod saddle;
pub mod schema;
pub mod sets;

pub use error::{Error, Result};
pub use families::{FamilySpec, GaussianCov, Observation, TestFunction};
pub use problem::{AffineMap, ChannelGroup, EstimationProblem};
pub use sets::{LinMax, SignalSet};
