use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("kernel matrix is ill-conditioned (estimated condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("measure has no mass")]
    EmptySupport,

    #[error("iteration limit {iterations} reached (residual {residual:.3e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("inner solver hit its iteration limit {iterations} (optimality residual {residual:.3e})")]
    InnerMaxIterExceeded { iterations: usize, residual: f64 },

    #[error("embedding invariant `{invariant}` violated (residual {residual:.3e})")]
    EmbeddingInvariantViolated { invariant: &'static str, residual: f64 },

    #[error("vector is not in the cone of kernel images of nonnegative measures (min preimage entry {min_entry:.3e})")]
    NotInCone { min_entry: f64 },

    #[error("perturbation must have zero total mass (got {mass:.3e})")]
    NotMassZero { mass: f64 },

    #[error("velocity is not tangent to the sphere (pairing {pairing:.3e})")]
    NotTangent { pairing: f64 },

    #[error("complementarity solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    LcpNotConverged { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
