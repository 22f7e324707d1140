use alloc::string::String;

/// Errors produced by the core numerics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("bad embedding file format: {0}")]
    Format(String),
    #[error("corrupt embedding payload: expected {expected} bytes, found {found}")]
    Corrupt { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} flagged normalized but has norm {norm}")]
    NotNormalized { row: usize, norm: f64 },
    #[error("invalid embedding matrix: {0}")]
    Validation(String),
    #[error("row {row} has zero norm")]
    DegenerateRow { row: usize },
    #[error("pairing error: {0}")]
    Pairing(String),
    #[error("insufficient data: need at least {needed} rows, got {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite: pivot {pivot} = {value} at maximum jitter")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { step: usize, term: &'static str },
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;
