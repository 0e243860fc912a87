use std::path::PathBuf;

use c2b_core::ImagingError;
use c2b_model::ModelError;
use c2b_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("config: {0}")]
    Config(String),
    #[error("config: missing required key '{0}'")]
    MissingKey(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("non-finite loss at step {step}: l1 = {l1}, tv = {tv}")]
    NonFiniteLoss { step: u64, l1: f64, tv: f64 },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;
