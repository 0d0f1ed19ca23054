use thiserror::Error;

/// Errors raised by model construction, integration and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("integration failed at t = {t_last} ps: {reason}")]
    Integration { t_last: f64, reason: String },

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error("steady state is not unique ({0} null vectors)")]
    AmbiguousSteadyState(usize),

    #[error("reference time {t_ref} ps lies outside the window [{start}, {end}]")]
    OutOfWindow { t_ref: f64, start: f64, end: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("no pi-pulse found below <n> = {0}")]
    PiPulseNotFound(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
