use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AnnotateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("unknown frame {0:?}")]
    UnknownFrame(String),

    #[error("invalid submission: {0}")]
    Validation(String),

    #[error("frame {frame_id:?} is leased to {holder:?}")]
    Leased { frame_id: String, holder: String },

    #[error("event log {path}, line {line}: {reason}")]
    Log { path: PathBuf, line: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] artifact_core::Error),
}

impl AnnotateError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotateError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        match self {
            AnnotateError::Io { .. } => true,
            AnnotateError::Core(e) => e.is_io(),
            _ => false,
        }
    }
}
