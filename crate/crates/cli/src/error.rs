use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{path}`: {message}")]
    Field { path: String, message: String },
    #[error("svd-analyze needs a checkpoint (svd.checkpoint or --checkpoint) or --train-inline")]
    MissingCheckpoint,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] eal_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Field { .. } | CliError::MissingCheckpoint => 2,
            _ => 1,
        }
    }
}
