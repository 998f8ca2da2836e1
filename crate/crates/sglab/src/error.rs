use thiserror::Error;

/// Errors raised by the library. Every variant carries enough text to tell the
/// user which input was wrong; the CLI maps all of them to exit code 1 except
/// where an experiment reports a failed check instead.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("lattice cannot resolve the request: {0}")]
    Unresolved(String),

    #[error("saturation: {0}")]
    Saturation(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("modulation underresolved: {0}")]
    ModulationUnderresolved(String),

    #[error("point lies on the singular set: {0}")]
    SingularPoint(String),

    #[error("time step {dt} exceeds the admissible maximum {dt_max}")]
    TimestepTooLarge { dt: f64, dt_max: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
