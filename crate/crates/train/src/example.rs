//! Turning ground-truth clips into network inputs and targets.

use c2b_core::{
    encode_blurred, encode_coded, pixel_shuffle_image, recover_lowres_coded, LowResVideo, TiledCode, VideoCube,
};
use c2b_model::{videos_to_tensor, ModelInputs, ModelVariant};
use c2b_nn::Tensor;

use crate::error::{Result, TrainError};

/// Low-resolution inputs for one clip plus the clip itself as target.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub coded: Option<LowResVideo>,
    pub blurred: Option<LowResVideo>,
    pub target: VideoCube,
}

/// Simulates the observations of `clip` under `code` and recovers the
/// low-resolution videos the variant consumes.
pub fn make_example(clip: &VideoCube, code: &TiledCode, variant: ModelVariant) -> Result<Example> {
    if (clip.len(), clip.height(), clip.width()) != (code.len(), code.height(), code.width()) {
        return Err(TrainError::Data(format!(
            "clip {}x{}x{} does not match code {}x{}x{}",
            clip.len(),
            clip.height(),
            clip.width(),
            code.len(),
            code.height(),
            code.width()
        )));
    }
    let coded = match variant {
        ModelVariant::Pair | ModelVariant::CodedOnly => {
            let y = encode_coded(clip, code)?;
            Some(recover_lowres_coded(&y, code)?)
        }
        ModelVariant::BlurredOnly => None,
    };
    let blurred = match variant {
        ModelVariant::Pair | ModelVariant::BlurredOnly => {
            let y = encode_blurred(clip);
            Some(pixel_shuffle_image(&y, code.base().tile_size())?)
        }
        ModelVariant::CodedOnly => None,
    };
    Ok(Example {
        coded,
        blurred,
        target: clip.clone(),
    })
}

/// An example converted to `1 × T × h × w` tensors.
#[derive(Debug, Clone)]
pub struct TensorExample {
    pub coded: Option<Tensor<f32>>,
    pub blurred: Option<Tensor<f32>>,
    pub target: Tensor<f32>,
}

impl TensorExample {
    pub fn from_example(ex: &Example) -> Result<Self> {
        Ok(TensorExample {
            coded: ex.coded.as_ref().map(|v| videos_to_tensor(&[v])).transpose()?,
            blurred: ex.blurred.as_ref().map(|v| videos_to_tensor(&[v])).transpose()?,
            target: videos_to_tensor(&[&ex.target])?,
        })
    }
}

fn stack(parts: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = parts
        .first()
        .ok_or_else(|| TrainError::Data("empty batch".into()))?;
    let mut shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * parts.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(TrainError::Data(format!(
                "batch members differ in shape: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(p.data());
    }
    shape[0] = parts.len() * first.shape()[0];
    Ok(Tensor::new(shape, data)?)
}

/// Concatenates examples along the batch axis.
pub fn collate(examples: &[&TensorExample]) -> Result<(ModelInputs<f32>, Tensor<f32>)> {
    let gather = |f: fn(&TensorExample) -> Option<&Tensor<f32>>| -> Result<Option<Tensor<f32>>> {
        let parts: Option<Vec<&Tensor<f32>>> = examples.iter().map(|e| f(e)).collect();
        parts.map(|p| stack(&p)).transpose()
    };
    let inputs = ModelInputs {
        coded: gather(|e| e.coded.as_ref())?,
        blurred: gather(|e| e.blurred.as_ref())?,
    };
    let targets: Vec<&Tensor<f32>> = examples.iter().map(|e| &e.target).collect();
    Ok((inputs, stack(&targets)?))
}
