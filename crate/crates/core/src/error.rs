use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] rffsb_nn::NnError),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
