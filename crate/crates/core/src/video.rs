use std::ops::Deref;

use crate::error::{ImagingError, Result};

/// A single-channel intensity plane, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(ImagingError::dims(format!("empty plane {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(ImagingError::dims(format!(
                "plane {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(ImagingError::InvalidValue(format!(
                "value {v} at ({}, {}) is outside [0, 1]",
                i / width,
                i % width
            )));
        }
        Ok(Plane { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Plane::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Plane::new(height, width, vec![value; height * width])
    }

    /// Builds a plane from values the caller has already produced inside `[0, 1]`.
    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        debug_assert!(data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        Plane { height, width, data }
    }

    /// Clamps every value into `[0, 1]`; non-finite values are rejected.
    pub fn clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(ImagingError::InvalidValue(format!("non-finite value {v}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Plane::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Horizontal mirror.
    pub fn mirrored(&self) -> Plane {
        let w = self.width;
        let data = (0..self.height)
            .flat_map(|y| (0..w).rev().map(move |x| (y, x)))
            .map(|(y, x)| self.get(y, x))
            .collect();
        Plane::from_vec_unchecked(self.height, self.width, data)
    }

    /// Crop of `size_h × size_w` starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Plane> {
        if top + size_h > self.height || left + size_w > self.width || size_h == 0 || size_w == 0 {
            return Err(ImagingError::dims(format!(
                "crop {size_h}x{size_w} at ({top}, {left}) exceeds plane {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(size_h * size_w);
        for y in top..top + size_h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + left..row + left + size_w]);
        }
        Ok(Plane::from_vec_unchecked(size_h, size_w, data))
    }
}

/// A `T`-frame single-channel video with every frame `H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoCube {
    frames: Vec<Plane>,
}

impl VideoCube {
    pub fn new(frames: Vec<Plane>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| ImagingError::dims("a video needs at least one frame"))?;
        let dims = first.dims();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(ImagingError::dims(format!(
                "frame {t} is {}x{}, expected {}x{}",
                f.height, f.width, dims.0, dims.1
            )));
        }
        Ok(VideoCube { frames })
    }

    pub fn constant(height: usize, width: usize, len: usize, value: f64) -> Result<Self> {
        let plane = Plane::filled(height, width, value)?;
        VideoCube::new(vec![plane; len])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        len: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let frames = (0..len)
            .map(|t| Plane::from_fn(height, width, |y, x| f(t, y, x)))
            .collect::<Result<Vec<_>>>()?;
        VideoCube::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn frame(&self, t: usize) -> &Plane {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[Plane] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Plane> {
        self.frames
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize) -> f64 {
        self.frames[t].get(y, x)
    }

    pub fn time_reversed(&self) -> VideoCube {
        VideoCube {
            frames: self.frames.iter().rev().cloned().collect(),
        }
    }

    pub fn mirrored(&self) -> VideoCube {
        VideoCube {
            frames: self.frames.iter().map(Plane::mirrored).collect(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<VideoCube> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.crop(top, left, size_h, size_w))
            .collect::<Result<Vec<_>>>()?;
        Ok(VideoCube { frames })
    }
}

/// A `(H/N)×(W/N)×T` video recovered from one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LowResVideo(VideoCube);

impl LowResVideo {
    pub fn new(video: VideoCube) -> Self {
        LowResVideo(video)
    }

    pub fn into_inner(self) -> VideoCube {
        self.0
    }
}

impl Deref for LowResVideo {
    type Target = VideoCube;

    fn deref(&self) -> &VideoCube {
        &self.0
    }
}
