use thiserror::Error;

/// Errors raised by the toolkit's operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("state {state:?} lies outside the phase-space domain")]
    Domain { state: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid phase space: {0}")]
    InvalidSpace(String),

    #[error("invalid symplectic form: {0}")]
    InvalidForm(String),

    #[error("invalid integrator configuration: {0}")]
    Config(String),

    #[error("invalid section: {0}")]
    InvalidSection(String),

    #[error("no crossing of the section before {0}")]
    NoCrossing(String),

    #[error("tangential crossing at t = {t}: transversality {transversality:e}")]
    TangentialCrossing { t: f64, transversality: f64 },

    #[error("state {state:?} is stationary (field norm {norm:e})")]
    StationaryPoint { state: Vec<f64>, norm: f64 },

    #[error("local clock validation failed: {0}")]
    ValidationFailed(String),

    #[error("state {state:?} lies outside the clock ball of radius {radius}")]
    OutsideBall { state: Vec<f64>, radius: f64 },

    #[error("precondition unverified: {0}")]
    PreconditionUnverified(String),

    #[error("tangent vectors are attached to different base points")]
    BaseMismatch,

    #[error("observable kind mismatch: {0}")]
    KindMismatch(String),

    #[error("matrix is not Hermitian (residual {0:e})")]
    NotHermitian(f64),

    #[error("tangent vector is not horizontal (overlap {0:e})")]
    NotHorizontal(f64),

    #[error("zero vector does not define a projective point")]
    ZeroVector,
}

pub type Result<T> = std::result::Result<T, Error>;
