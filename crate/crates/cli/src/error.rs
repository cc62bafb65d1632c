use std::path::PathBuf;

use splatdiff::error::SplatError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Splat(#[from] SplatError),
    #[error("gradient audit failed")]
    AuditFailed,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 1 when the audit ran and found a mismatch, 2 for everything the user
    /// has to fix in their inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::AuditFailed => 1,
            _ => 2,
        }
    }
}
