use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("parameter outside the open domain of the family: {0}")]
    OutOfDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is not in the signal set: {0}")]
    Infeasible(String),

    #[error("inner maximization did not converge after {iterations} iterations (Frank-Wolfe gap {gap:.3e})")]
    InnerNotConverged { iterations: usize, gap: f64 },

    #[error("solver stopped before certification: gap {gap:.3e} > tol {tol:.3e}")]
    NotCertified { gap: f64, tol: f64 },

    #[error("iteration cap reached with gap {gap:.3e} > tol {tol:.3e}")]
    SolverCap {
        gap: f64,
        tol: f64,
        solution: Box<crate::saddle::SaddleSolution>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        })
    }
}
