use std::path::PathBuf;

use thiserror::Error;

use crate::record::ReviewState;

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("record {record_id}: {message}")]
    Conflict { record_id: String, message: String },
    #[error("policy: {0}")]
    Policy(String),
    #[error("invalid edit: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("record {0} not found")]
    NotFound(String),
    #[error("cannot {action} a record in state {state}")]
    State { state: ReviewState, action: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Data(#[from] aura_core::CoreError),
}

impl ReviewError {
    /// Machine-readable code carried by API error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Conflict { .. } | Self::State { .. } => "conflict",
            Self::Policy(_) => "policy",
            Self::Validation(_) => "validation",
            Self::NotFound(_) => "not_found",
            Self::Io { .. } | Self::Corrupt { .. } | Self::Data(_) => "internal",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
