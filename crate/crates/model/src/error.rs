use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] qvt_core::CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed array file: {0}")]
    Format(String),

    #[error("dataset does not match the expected schema: {0}")]
    Schema(String),

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    Integrity { path: String, expected: String, actual: String },

    #[error("failed to fetch {url} after {attempts} attempts: {message}")]
    Fetch { url: String, attempts: u32, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
