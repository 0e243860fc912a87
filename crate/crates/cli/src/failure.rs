use std::fmt;
use std::path::Path;

use c2b_core::ImagingError;
use c2b_model::ModelError;
use c2b_nn::NnError;
use c2b_train::TrainError;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const NUMERICAL: u8 = 3;

/// An error message paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: DATA, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Failure { code: NUMERICAL, message: message.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Failure::data(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn imaging_code(e: &ImagingError) -> u8 {
    match e {
        ImagingError::SingularSystem(_) => NUMERICAL,
        _ => DATA,
    }
}

fn nn_code(e: &NnError) -> u8 {
    match e {
        NnError::Shape { .. } => DATA,
        _ => NUMERICAL,
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Nn(e) => nn_code(e),
        ModelError::Imaging(e) => imaging_code(e),
        ModelError::Config(_) | ModelError::Variant { .. } => USAGE,
        ModelError::Shape(_) => DATA,
        ModelError::NonFinite(_) => NUMERICAL,
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        Failure { code: imaging_code(&e), message: e.to_string() }
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        Failure { code: nn_code(&e), message: e.to_string() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure { code: model_code(&e), message: e.to_string() }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Imaging(e) => imaging_code(e),
            TrainError::Model(e) => model_code(e),
            TrainError::Nn(e) => nn_code(e),
            TrainError::Config(_) | TrainError::MissingKey(_) => USAGE,
            TrainError::NonFiniteLoss { .. } => NUMERICAL,
            TrainError::Data(_) | TrainError::Checkpoint { .. } | TrainError::Io { .. } => DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;
