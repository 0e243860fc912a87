use c2b_core::ImagingError;
use c2b_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input shape: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("variant {variant} does not support {what}")]
    Variant { variant: String, what: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;
