use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse grouping used by front ends to map failures onto exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Parse,
    Validation,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("state index {index} out of range for a model with {states} states")]
    IndexOutOfRange { index: usize, states: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("state subset must be strictly increasing: {0:?}")]
    UnsortedSubset(Vec<usize>),

    #[error("invalid state subset: {0}")]
    InvalidSubset(String),

    #[error("invalid subset size k={k} for m={m} states (need 0 < k < m)")]
    InvalidSize { m: usize, k: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model is not Schur stable (spectral radius {spectral_radius})")]
    Unstable { spectral_radius: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("innovation covariance is singular at step {step}")]
    SingularInnovation { step: usize },

    #[error("covariance is not positive definite")]
    SingularCovariance,

    #[error("target noise covariance is singular")]
    SingularTargetNoise,

    #[error("gramian is not positive definite")]
    SingularGramian,

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("output gain C1 + C2 is zero")]
    DegenerateOutput,

    #[error("crossing bounds undefined: {0}")]
    BoundsUndefined(String),

    #[error("model file: {0}")]
    Parse(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse(_) => ErrorClass::Parse,
            Error::DimensionMismatch(_)
            | Error::IndexOutOfRange { .. }
            | Error::LengthMismatch { .. }
            | Error::UnsortedSubset(_)
            | Error::InvalidSubset(_)
            | Error::InvalidSize { .. }
            | Error::InvalidModel(_)
            | Error::Unstable { .. }
            | Error::DegenerateOutput => ErrorClass::Validation,
            Error::NoConvergence { .. }
            | Error::SingularInnovation { .. }
            | Error::SingularCovariance
            | Error::SingularTargetNoise
            | Error::SingularGramian
            | Error::NotPositiveSemidefinite { .. }
            | Error::BoundsUndefined(_) => ErrorClass::Numerical,
        }
    }
}
