use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = GenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid annotation bundle: {0}")]
    Bundle(String),
    #[error("cannot assemble prompt: {0}")]
    Assembly(String),
    #[error("prompt template lacks required section `{section}`")]
    MissingSection { section: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("service call failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("service request rejected: {0}")]
    Request(String),
    #[error("unparseable response envelope: {0}")]
    Envelope(String),
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] aura_core::CoreError),
    #[error(transparent)]
    Review(#[from] aura_review::ReviewError),
}
