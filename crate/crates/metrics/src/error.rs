use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Image(#[from] imagecore::ImageError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
