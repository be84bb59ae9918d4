use std::path::PathBuf;

use thiserror::Error;

use crate::solvers::CgSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("index {index} out of range for size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("duplicate index {0} in selection")]
    DuplicateIndex(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("factor {0} is not symmetric")]
    NotSymmetric(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("eigensolver failed to converge on factor {0}")]
    EigenNoConvergence(usize),

    #[error("shifted spectrum is singular: eigenvalue {eigenvalue:e} with shift {shift:e}")]
    Singular { eigenvalue: f64, shift: f64 },

    #[error("kernel matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("rank p = {p} exceeds problem size {size}")]
    RankTooLarge { p: usize, size: usize },

    #[error("spectral shift zeta = {zeta:e} outside open interval (0, {bound:e})")]
    InvalidShift { zeta: f64, bound: f64 },

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("conjugate gradient did not converge after {} iterations (relative residual {:e})", .0.report.iterations, .0.report.rel_residual)]
    NotConverged(Box<CgSolution>),

    #[error("conjugate gradient breakdown at iteration {0}")]
    Breakdown(usize),

    #[error("model has no fitted weight vector")]
    NotFitted,

    #[error("stale model artifact: {0}")]
    Stale(String),

    #[error("oracle refused: grid size {size} exceeds cap {cap}")]
    OracleCap { size: usize, cap: usize },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNoConvergence(_)
                | Error::Singular { .. }
                | Error::NotPsd(_)
                | Error::Factorization(_)
                | Error::NotConverged(_)
                | Error::Breakdown(_)
                | Error::Optimizer(_)
                | Error::NonFinite(_)
        )
    }
}
