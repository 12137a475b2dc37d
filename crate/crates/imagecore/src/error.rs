use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimensions { expected: String, got: String },
    #[error("expected {expected} channels, got {got}")]
    Channels { expected: String, got: usize },
    #[error("value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("label {0} is not present in the palette")]
    UnknownLabel(u16),
    #[error("mask is not binary: found label {0}")]
    NotBinary(u16),
    #[error("invalid palette: {0}")]
    Palette(String),
    #[error("volume has zero depth")]
    EmptyVolume,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("codec error on {path}: {message}")]
    Codec { path: String, message: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ImageError>;
