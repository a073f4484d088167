use std::path::PathBuf;

use aura_core::CoreError;

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined loss: {0}")]
    UndefinedLoss(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at step {step} on sample {sample_id}: {components}")]
    NonFinite {
        step: u64,
        sample_id: String,
        components: String,
    },

    #[error("corrupt checkpoint {}: {message}", path.display())]
    CorruptCheckpoint { path: PathBuf, message: String },

    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<ModelError>,
    },

    #[error("[SEG] {index}: {source}")]
    Seg {
        index: usize,
        #[source]
        source: Box<ModelError>,
    },

    #[error(transparent)]
    Data(#[from] CoreError),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ModelError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_sample(self, sample_id: &str) -> Self {
        Self::Sample {
            sample_id: sample_id.to_string(),
            source: Box::new(self),
        }
    }
}
