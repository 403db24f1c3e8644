use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dimension too small: {0}")]
    DimensionTooSmall(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("nonpositive value: {0}")]
    NonPositive(String),
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("every pixel is masked out")]
    AllMasked,
    #[error("non-finite loss term {term} = {value}")]
    NonFiniteLoss { term: String, value: f64 },
    #[error("tape is empty")]
    EmptyTape,
    #[error("backward seed is not a scalar node")]
    NonScalarTerminal,
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("no valid pixels for evaluation")]
    NoValidPixels,
    #[error("median of valid pixels is zero")]
    ZeroMedian,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
