use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("grid needs at least 4 cells per dimension, got {0}")]
    GridTooCoarse(usize),

    #[error("fields live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },

    #[error("field has {got} values, grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at cell {index}")]
    NonFinite { index: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel width epsilon = {epsilon} is below 2h = {min} (grid cannot resolve it)")]
    UnresolvedKernel { epsilon: f64, min: f64 },

    #[error("dense kernel assembly refused: {cells} cells exceeds the limit of {limit}")]
    TooManyCells { cells: usize, limit: usize },

    #[error("input mean {mean:e} is not zero (tolerance {tol:e})")]
    NonZeroMean { mean: f64, tol: f64 },

    #[error("value {value} lies outside the domain of the {potential} potential")]
    OutsideDomain { potential: &'static str, value: f64 },

    #[error("quadrature did not converge (estimated error {estimate:e})")]
    Quadrature { estimate: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("linear solve failed in {0}")]
    SingularSystem(&'static str),

    #[error("Newton failed at step {step} (t = {t}): residual {residual:e} after {iterations} iterations")]
    NewtonFailed {
        step: usize,
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("sweep point {parameter} = {value} failed: {source}")]
    SweepPoint {
        parameter: &'static str,
        value: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
