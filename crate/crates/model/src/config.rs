use std::fmt;
use std::str::FromStr;

use crate::error::{ModelError, Result};

/// Which observations the network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// Coded and blurred inputs fused by attention.
    Pair,
    CodedOnly,
    BlurredOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Pair, ModelVariant::CodedOnly, ModelVariant::BlurredOnly];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Pair => "pair",
            ModelVariant::CodedOnly => "coded",
            ModelVariant::BlurredOnly => "blurred",
        }
    }

    pub fn is_pair(self) -> bool {
        self == ModelVariant::Pair
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair" => Ok(ModelVariant::Pair),
            "coded" | "coded-only" => Ok(ModelVariant::CodedOnly),
            "blurred" | "blurred-only" => Ok(ModelVariant::BlurredOnly),
            other => Err(ModelError::Config(format!(
                "unknown variant '{other}' (expected pair, coded or blurred)"
            ))),
        }
    }
}

/// Network hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Code tile size; the output is `n` times the input resolution.
    pub n: usize,
    /// Frames per clip, also the encoder's input channel count.
    pub t: usize,
    pub variant: ModelVariant,
    pub encoder_widths: [usize; 3],
    pub unet_widths: [usize; 3],
    pub bottleneck: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 3,
            t: 9,
            variant: ModelVariant::Pair,
            encoder_widths: [64, 64, 128],
            unet_widths: [64, 128, 256],
            bottleneck: 512,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: ModelVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(ModelError::Config(format!("n = {} and t = {} must be positive", self.n, self.t)));
        }
        let widths = self.encoder_widths.iter().chain(&self.unet_widths);
        if widths.chain([&self.bottleneck]).any(|&w| w == 0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Channels entering the U-Net.
    pub fn unet_input_channels(&self) -> usize {
        match self.variant {
            ModelVariant::Pair => 2 * self.encoder_widths[2],
            _ => self.encoder_widths[2],
        }
    }

    /// Channels of the final convolution, before the sub-pixel layer.
    pub fn output_channels(&self) -> usize {
        self.t * self.n * self.n
    }

    /// Low-resolution spatial dims must survive three 2× poolings.
    pub fn check_input_dims(&self, height: usize, width: usize) -> Result<()> {
        if height == 0 || width == 0 || !height.is_multiple_of(8) || !width.is_multiple_of(8) {
            return Err(ModelError::Shape(format!(
                "low-resolution input {height}x{width} must be a positive multiple of 8 in each dimension"
            )));
        }
        Ok(())
    }
}
