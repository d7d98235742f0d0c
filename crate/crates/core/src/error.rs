use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch between {prev} and {next}: {detail}")]
    ShapeMismatch {
        prev: String,
        next: String,
        detail: String,
    },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("unmappable layer {layer}: {reason}")]
    Unmappable { layer: String, reason: String },

    #[error("policy violation: {0}")]
    PolicyViolation(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("data integrity error in row {row}: {detail}")]
    DataIntegrity { row: String, detail: String },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Returns true for errors that stem from malformed configuration input.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ShapeMismatch { .. })
    }
}
