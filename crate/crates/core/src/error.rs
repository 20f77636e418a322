use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FuseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    UnsupportedChannels(usize),

    #[error("invalid image geometry: {width}x{height}x{channels} with {len} samples")]
    InvalidGeometry {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("translation ({tx}, {ty}) exceeds image extent {width}x{height}")]
    TranslationOutOfRange {
        tx: i64,
        ty: i64,
        width: usize,
        height: usize,
    },

    #[error("invalid box filter size {0} (must be odd, >= 9 and = 3 mod 6)")]
    InvalidFilterSize(usize),

    #[error(
        "image {width}x{height} is smaller than the largest filter ({filter} px); reduce the octave count"
    )]
    ImageTooSmall {
        width: usize,
        height: usize,
        filter: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("registration failed for {image}: {reason}")]
    RegistrationFailed { image: String, reason: String },

    #[error("unsupported bit depth in {path}: {detail}")]
    UnsupportedBitDepth { path: PathBuf, detail: String },

    #[error("failed to decode {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("failed to encode {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FuseError {
    /// Input errors map to CLI exit code 2, registration failures to 3.
    pub fn is_registration_failure(&self) -> bool {
        matches!(self, FuseError::RegistrationFailed { .. })
    }
}
