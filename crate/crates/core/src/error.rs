use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("point is infeasible (max violation {violation:e} > tolerance {tolerance:e})")]
    Infeasible { violation: f64, tolerance: f64 },

    #[error(
        "orthogonality pair {pair} has |F1| = {f1:e} and F2 = {f2:e}, both outside the activity \
         tolerance on a feasible point; tighten the feasibility tolerance or widen the activity tolerance"
    )]
    ToleranceConflict { pair: usize, f1: f64, f2: f64 },

    #[error("non-finite evaluation while perturbing coordinate {coordinate}")]
    NonFinite { coordinate: usize },

    #[error("unknown catalog entry `{name}`; available: {available}")]
    UnknownProblem { name: String, available: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("support of x has {support} entries, sparsity level is {s}")]
    SparsityViolated { support: usize, s: usize },

    #[error("point is not M-stationary: |df/dx_{index}| = {value:e}")]
    NotMStationary { index: usize, value: f64 },

    #[error("point is not T-stationary: {0}")]
    NotTStationary(String),

    #[error("cross-check failed: {0}")]
    CrossCheck(String),

    #[error("problem file: {0}")]
    ProblemFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
