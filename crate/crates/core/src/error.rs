use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An API precondition was violated (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid model, training or CLI configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Dataset content is invalid (bad label, width mismatch, too small, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("metric error: {0}")]
    Metric(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("non-finite loss at epoch {epoch}, batch {batch} (lr = {lr:e})")]
    NumericAbort { epoch: usize, batch: usize, lr: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
