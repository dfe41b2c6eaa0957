use thiserror::Error;

use crate::config::ConfigError;
use crate::dataset::DataError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("token id {token} is outside the vocabulary of {vocab}")]
    OutOfVocab { token: usize, vocab: usize },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("entity pair selection needs at least 2 entities, got {0}")]
    TooFewEntities(usize),
    #[error("post {0:?} has no image features; materialize modalities first")]
    MissingImage(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (posts {first_post}..)")]
    NonFiniteLoss {
        loss: f64,
        epoch: usize,
        batch: usize,
        first_post: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("statistics: {0}")]
    Stats(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
