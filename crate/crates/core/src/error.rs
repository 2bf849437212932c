use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the unmixing pipeline.
#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("matrix is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadratic program failed: {0}")]
    QpFailure(String),

    #[error("no sign change in the initial bracket: {0}")]
    Bracket(String),

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<UnmixError>,
    },
}

impl UnmixError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UnmixError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        UnmixError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        UnmixError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Name of the innermost pipeline stage, if the error was tagged with one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            UnmixError::Stage { stage, source } => source.stage().or(Some(stage)),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, UnmixError>;
