use std::fmt::Display;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// A user-supplied file is missing or does not parse.
    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error(transparent)]
    Core(#[from] csnas::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(path: &Path, err: impl Display) -> Self {
        CliError::Input {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 2 for usage or input problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input { .. } => 2,
            CliError::Core(csnas::Error::InvalidArgument(_)) => 2,
            CliError::Core(_) | CliError::Write { .. } => 1,
        }
    }
}
