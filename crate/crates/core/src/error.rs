use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;
use crate::stats::StatsError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("prompt: {0}")]
    Prompt(String),

    #[error("dsm: {0}")]
    Dsm(String),

    #[error("embedding: {0}")]
    Embedding(String),

    #[error("viz: {0}")]
    Viz(String),

    #[error("config: {0}")]
    Config(String),

    #[error("transcript {}: line {line}: {message}", path.display())]
    Transcript {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
