use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("series too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("critical value not tabulated for {0}")]
    NotTabulated(String),

    #[error("insufficient training data: {available} samples after change point {last_cp}, need {needed}")]
    InsufficientTraining {
        last_cp: usize,
        available: usize,
        needed: usize,
    },

    #[error("detector already stopped at k = {0}")]
    Stopped(usize),

    #[error("unknown {what} `{name}` (available: {available})")]
    UnknownStrategy {
        what: &'static str,
        name: String,
        available: String,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
