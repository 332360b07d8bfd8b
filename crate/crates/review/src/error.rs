use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error(transparent)]
    Data(#[from] handseg::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("decision log line {line}: {msg}")]
    Log { line: usize, msg: String },
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("verdict must be `accept` or `reject`, got `{0}`")]
    BadVerdict(String),
}

impl ReviewError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        ReviewError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = ReviewError> = std::result::Result<T, E>;
