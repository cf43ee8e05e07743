//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid field mask: {0}")]
    InvalidFieldMask(String),

    #[error("invalid joint state: {0}")]
    InvalidState(String),

    #[error("collision violation: agents {a} and {b} both moved to {cell}")]
    CollisionViolation { a: usize, b: usize, cell: String },

    #[error("LP dimension mismatch: {0}")]
    LpDimension(String),

    #[error("LP contains non-finite coefficient")]
    LpNonFinite,

    #[error("LP iteration limit reached after {0} pivots")]
    LpIterationLimit(usize),

    #[error("CE solve failed: {0}")]
    CeSolve(String),

    #[error("no admissible joint action")]
    EmptyAdmissibleSet,

    #[error("feature scheme mismatch: expected {expected}, got {got}")]
    SchemeMismatch { expected: &'static str, got: &'static str },

    #[error("vector length mismatch: {0}")]
    LengthMismatch(String),

    #[error("parameter vector diverged (non-finite entry at index {0})")]
    Divergence(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
