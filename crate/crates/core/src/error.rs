//! Error type shared across the crate.
//!
//! Variants map onto the CLI exit codes: config errors exit 2, data errors
//! (including unreadable inputs) exit 3, runtime failures exit 4.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad hyperparameters, unknown keys,
    /// incompatible shapes requested by the caller).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data (parse failures, missing items,
    /// dimension mismatches in files).
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure on a named path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Internal failure while running (numerical blowup, guard violations).
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Runtime(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
