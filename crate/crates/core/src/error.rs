use thiserror::Error;

/// Errors raised by the fitting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dimension: {0}")]
    InvalidDimension(String),

    #[error("field shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constraint rows are rank deficient (pivot {pivot:e} at row {row})")]
    RankDeficient { row: usize, pivot: f64 },

    #[error("conjugate gradient breakdown at iteration {iteration}: curvature {curvature:e}")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("constraint drift {violation:e} exceeds tolerance")]
    ConstraintDrift { violation: f64 },

    #[error("anchor ({i}, {j}) is not on the level-{step} lattice")]
    OffLattice { i: usize, j: usize, step: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
