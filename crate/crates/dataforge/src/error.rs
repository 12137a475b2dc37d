use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("constraint unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("patient leakage: {0}")]
    Leakage(String),
    #[error(transparent)]
    Image(#[from] imagecore::ImageError),
}

pub type Result<T> = std::result::Result<T, ForgeError>;
