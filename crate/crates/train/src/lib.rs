//! Dataset preparation, the training loop and checkpoint files.

pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod example;
pub mod synth;
pub mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use data::{extract_patches, load_clip_dataset, window_clips, ClipDataset};
pub use error::{Result, TrainError};
pub use example::{make_example, Example};
pub use synth::{synth_dataset, SynthShape, SynthSpec};
pub use trainer::{format_loss_log, loss_terms, train, LossRecord, LossVars, TrainState, Trainer};
