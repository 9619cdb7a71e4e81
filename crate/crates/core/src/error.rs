//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical error in {op}: {detail}")]
    Numerical { op: String, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("insufficient voicing: {0}")]
    InsufficientVoicing(String),

    #[error("feature alignment error: {0}")]
    FeatureAlignment(String),

    #[error("feature file error: {0}")]
    FeatureFile(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("wav error in {path}: {detail}")]
    Wav { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn numerical(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            op: op.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::Checkpoint(_) => 1,
            Error::Numerical { .. } | Error::Optimizer(_) => 3,
            Error::InvalidInput(_)
            | Error::Shape(_)
            | Error::InsufficientVoicing(_)
            | Error::FeatureAlignment(_)
            | Error::FeatureFile(_)
            | Error::Wav { .. }
            | Error::Io(_) => 2,
        }
    }
}
