use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {detail}")]
    Malformed { path: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] bipfit_core::Error),
}

impl CliError {
    pub fn malformed(path: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Malformed {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code: 1 usage, 2 malformed or unusable input, 3 a
    /// violated internal invariant.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Malformed { .. } | CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_internal() => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
