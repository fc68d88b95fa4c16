use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("probability vector is empty")]
    Empty,

    #[error("entry {index} is not a finite non-negative number ({value})")]
    InvalidEntry { index: usize, value: f64 },

    #[error("entries sum to {sum}, which is not within 1e-9 of one")]
    NotNormalized { sum: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("absolute continuity violated at index {index}: mass is positive where the reference is zero")]
    AbsoluteContinuityViolation { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("output marginal degenerated at iteration {iteration}")]
    DegenerateMarginal { iteration: usize },

    #[error("run did not reach the accuracy target within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("at least two slopes are needed to build an envelope, got {got}")]
    InsufficientSlopes { got: usize },

    #[error("refinability conditions violated: {0}")]
    ConstraintViolated(Box<crate::successive::RefinabilityReport>),

    #[error("certificate infeasible: max sigma1 = {max_sigma1}, max sigma2 = {max_sigma2}")]
    CertificateInvalid { max_sigma1: f64, max_sigma2: f64 },

    #[error("first-stage term depends on the reconstruction (spread {spread})")]
    F1NotSourceOnly { spread: f64 },

    #[error("variance is zero; the normal approximation is undefined")]
    ZeroVariance,

    #[error("problem too large: {0}")]
    TooLarge(String),
}

pub type Result<T> = std::result::Result<T, Error>;
