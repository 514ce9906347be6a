use std::io;

use thiserror::Error;

/// Errors produced by the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("training diverged at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user configuration (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Param(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
