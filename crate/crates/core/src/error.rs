use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported or malformed image {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    Dimensions {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("frame too small: {width}x{height} (minimum 8x8)")]
    FrameTooSmall { width: usize, height: usize },
    #[error("chromaticity histogram is empty (every pixel is dark)")]
    EmptyHistogram,
    #[error("cluster id {0} is out of range")]
    InvalidCluster(usize),
    #[error("click at ({x}, {y}) does not select a usable region")]
    EmptyRegion { x: usize, y: usize },
    #[error("tracked region lost: no seed pixel kept its cluster id")]
    RegionLost,
    #[error("numerical fault at iteration {iteration}: {detail}")]
    NumericalFault { iteration: usize, detail: String },
    #[error("every correction candidate failed")]
    CorrectionFailed,
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
