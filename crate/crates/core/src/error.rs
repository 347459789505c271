use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid label {label} (expected a value in [0, {classes}))")]
    InvalidLabel { label: i64, classes: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid proportions: {0}")]
    InvalidProportions(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("infeasible imbalance scheme: {0}")]
    InfeasibleScheme(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("oracle labels unavailable: {0}")]
    UnavailableOracle(String),

    #[error("checkpoint version mismatch: found {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for usage and
    /// configuration problems, 2 for failures while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 1,
            _ => 2,
        }
    }
}
