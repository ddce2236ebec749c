use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inconsistent input: {0}")]
    Consistency(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame index {index} out of range for {n_frames} frames")]
    Index { index: usize, n_frames: usize },

    #[error("invalid environment state: {0}")]
    State(String),

    #[error("noise calibration failed: {0}")]
    Calibration(String),

    #[error("protocol error on line {line:?}: {message}")]
    Protocol { line: String, message: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("remote environment error: {0}")]
    Remote(String),

    #[error("non-finite value in {layer}")]
    Numeric { layer: &'static str },

    #[error("parameter file format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
