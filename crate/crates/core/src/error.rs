use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trajectory generation stuck at step {step}: no feasible primitive after {attempts} resamples")]
    GenerationStuck { step: usize, attempts: usize },

    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("version mismatch in {what}: found {found}, expected {expected}")]
    Version {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("training diverged at step {step} (loss = {loss}); diagnostics:\n{dump}")]
    TrainingDiverged { step: usize, loss: f64, dump: String },

    #[error("ranking failed: all {0} candidates failed to roll out")]
    RankingFailed(usize),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
