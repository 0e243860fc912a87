//! Attention-fusion reconstruction network.
//!
//! A shared shallow encoder maps the coded and blurred low-resolution videos
//! to feature maps, a cosine-similarity attention map blends them, and a
//! U-Net followed by a sub-pixel layer produces the full-resolution video.
//! Single-input variants skip the attention stage.

mod config;
mod error;
pub mod gradcheck;
mod model;

pub use config::{ModelConfig, ModelVariant};
pub use error::{ModelError, Result};
pub use model::{
    tensor_to_videos, videos_to_tensor, AttentionMap, AttentionVars, ConvLayer, Forward, Model, ModelInputs,
};
