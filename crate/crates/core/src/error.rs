use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ImagingError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("degenerate code: {0}")]
    DegenerateCode(String),

    #[error("unsupported code shape: N={n}, T={t} (the tile system needs T = N^2)")]
    UnsupportedShape { n: usize, t: usize },

    #[error("singular tile system: {0}")]
    SingularSystem(String),

    #[error("malformed code file: {0}")]
    CodeFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{0}")]
    Frames(String),
}

impl ImagingError {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        ImagingError::DimensionMismatch(msg.into())
    }
}
