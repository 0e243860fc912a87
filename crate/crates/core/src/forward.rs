//! Sensor forward model.
//!
//! Observations are stored exposure-normalized: the fully exposed image is the
//! temporal mean, and the coded image at each pixel is the mean over the
//! sub-exposures in which that pixel was open. Raw integrated charge is
//! recovered as `values ⊙ activation` (coded) or `T · values` (fully exposed).
//!
//! Means are accumulated as `x_ref + Σ (x_t − x_ref) / k` with `x_ref` the first
//! contributing sample, so a pixel whose samples are all equal reproduces that
//! value bit-for-bit.

use crate::code::{ExposureCode, TiledCode};
use crate::error::{ImagingError, Result};
use crate::video::{Plane, VideoCube};

#[derive(Debug, Clone, PartialEq)]
pub struct CodedImage {
    pub values: Plane,
    activation: Vec<usize>,
}

impl CodedImage {
    /// Reassembles a coded image from stored values and the code that produced it.
    pub fn from_values(values: Plane, code: &TiledCode) -> Result<Self> {
        if values.dims() != (code.height(), code.width()) {
            return Err(ImagingError::dims(format!(
                "coded image {}x{} does not match code {}x{}",
                values.height(),
                values.width(),
                code.height(),
                code.width()
            )));
        }
        let activation = activation_plane(code);
        Ok(CodedImage { values, activation })
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    #[inline]
    pub fn activation(&self, y: usize, x: usize) -> usize {
        self.activation[y * self.values.width() + x]
    }

    /// `values ⊙ activation`: the raw charge collected at each pixel.
    pub fn integrated(&self) -> Vec<f64> {
        self.values
            .as_slice()
            .iter()
            .zip(&self.activation)
            .map(|(&v, &a)| v * a as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullyExposedImage {
    pub values: Plane,
}

impl FullyExposedImage {
    pub fn new(values: Plane) -> Self {
        FullyExposedImage { values }
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }
}

/// The two complementary buckets of a coded-two-bucket pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketPair {
    /// Integrated under code `C`.
    pub bucket1: CodedImage,
    /// Integrated under code `1 − C`.
    pub bucket0: CodedImage,
    len: usize,
}

impl BucketPair {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn activation_plane(code: &TiledCode) -> Vec<usize> {
    let mut act = Vec::with_capacity(code.height() * code.width());
    for y in 0..code.height() {
        for x in 0..code.width() {
            act.push(code.activation(y, x));
        }
    }
    act
}

fn check_dims(video: &VideoCube, code: &TiledCode) -> Result<()> {
    if video.height() != code.height() || video.width() != code.width() || video.len() != code.len() {
        return Err(ImagingError::dims(format!(
            "video {}x{}x{} does not match code {}x{}x{}",
            video.height(),
            video.width(),
            video.len(),
            code.height(),
            code.width(),
            code.len()
        )));
    }
    Ok(())
}

/// Coded exposure image `Σ_t C_t ⊙ X_t`, normalized per pixel by the number
/// of open sub-exposures.
pub fn encode_coded(video: &VideoCube, code: &TiledCode) -> Result<CodedImage> {
    check_dims(video, code)?;
    let (h, w) = (video.height(), video.width());
    let activation = activation_plane(code);
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let k = activation[y * w + x];
            let mut reference = None;
            let mut acc = 0.0;
            for t in 0..video.len() {
                if code.get(y, x, t) == 1 {
                    let v = video.at(t, y, x);
                    let r = *reference.get_or_insert(v);
                    acc += v - r;
                }
            }
            let r = reference.expect("validated codes open every pixel at least once");
            values.push((r + acc / k as f64).clamp(0.0, 1.0));
        }
    }
    Ok(CodedImage {
        values: Plane::from_vec_unchecked(h, w, values),
        activation,
    })
}

/// Fully exposed image `Σ_t X_t / T`.
pub fn encode_blurred(video: &VideoCube) -> FullyExposedImage {
    let (h, w, len) = (video.height(), video.width(), video.len());
    let first = video.frame(0).as_slice();
    let mut acc = vec![0.0; h * w];
    for frame in &video.frames()[1..] {
        for ((a, &v), &r) in acc.iter_mut().zip(frame.as_slice()).zip(first) {
            *a += v - r;
        }
    }
    let values = acc
        .iter()
        .zip(first)
        .map(|(&a, &r)| (r + a / len as f64).clamp(0.0, 1.0))
        .collect();
    FullyExposedImage::new(Plane::from_vec_unchecked(h, w, values))
}

/// Both buckets of a coded-two-bucket sensor: code `C` and its complement.
pub fn encode_two_bucket(video: &VideoCube, code: &TiledCode) -> Result<BucketPair> {
    check_dims(video, code)?;
    let complement: ExposureCode = code.base().complement()?;
    let complement = TiledCode::new(&complement, code.height(), code.width())?;
    Ok(BucketPair {
        bucket1: encode_coded(video, code)?,
        bucket0: encode_coded(video, &complement)?,
        len: code.len(),
    })
}

/// Fully exposed image from the sum of the two buckets.
pub fn buckets_to_blurred(pair: &BucketPair) -> Result<FullyExposedImage> {
    let (b1, b0) = (&pair.bucket1, &pair.bucket0);
    if b1.values.dims() != b0.values.dims() {
        return Err(ImagingError::dims("bucket images differ in size"));
    }
    let len = pair.len as f64;
    let (h, w) = b1.values.dims();
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (a1, a0) = (b1.activation(y, x), b0.activation(y, x));
            if a1 + a0 != pair.len {
                return Err(ImagingError::DegenerateCode(format!(
                    "bucket activations at ({y}, {x}) sum to {}, expected {}",
                    a1 + a0,
                    pair.len
                )));
            }
            let total = a1 as f64 * b1.values.get(y, x) + a0 as f64 * b0.values.get(y, x);
            values.push((total / len).clamp(0.0, 1.0));
        }
    }
    Ok(FullyExposedImage::new(Plane::from_vec_unchecked(h, w, values)))
}
