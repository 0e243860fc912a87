//! Low-resolution video recovery from a single observation.
//!
//! Under the assumption that intensity is constant inside each `N×N` tile,
//! a coded tile gives `N²` equations in the `T` unknown tile intensities. For
//! `T = N²` the system `M x = y` is square, with `M[i, t]` the code value at
//! raster position `i` and frame `t`, and `y` the raw (un-normalized) tile.

use crate::code::{ExposureCode, TiledCode};
use crate::error::{ImagingError, Result};
use crate::forward::{CodedImage, FullyExposedImage};
use crate::video::{LowResVideo, Plane, VideoCube};

const PIVOT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
enum Solver {
    /// `x[t] = y[source[t]]`
    Permutation(Vec<usize>),
    /// Row-major `T×N²` inverse.
    Inverse(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct TileSystem {
    tile: usize,
    len: usize,
    matrix: Vec<f64>,
    solver: Solver,
}

impl TileSystem {
    pub fn tile_size(&self) -> usize {
        self.tile
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `M[i, t]`, row-major `N² × T`.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn is_permutation(&self) -> bool {
        matches!(self.solver, Solver::Permutation(_))
    }

    /// Row-major `T × N²` inverse of the system matrix.
    pub fn inverse(&self) -> Vec<f64> {
        match &self.solver {
            Solver::Inverse(inv) => inv.clone(),
            Solver::Permutation(source) => {
                let n2 = self.tile * self.tile;
                let mut inv = vec![0.0; self.len * n2];
                for (t, &i) in source.iter().enumerate() {
                    inv[t * n2 + i] = 1.0;
                }
                inv
            }
        }
    }

    /// `max |M · M⁻¹ − I|`.
    pub fn residual(&self) -> f64 {
        let n = self.len;
        let inv = self.inverse();
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let v: f64 = (0..n).map(|k| self.matrix[r * n + k] * inv[k * n + c]).sum();
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// Solves one tile. `y` holds the raw tile in raster order.
    pub fn solve(&self, y: &[f64], out: &mut [f64]) {
        match &self.solver {
            Solver::Permutation(source) => {
                for (o, &i) in out.iter_mut().zip(source) {
                    *o = y[i];
                }
            }
            Solver::Inverse(inv) => {
                let n2 = y.len();
                for (t, o) in out.iter_mut().enumerate() {
                    *o = inv[t * n2..(t + 1) * n2].iter().zip(y).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

fn permutation_source(matrix: &[f64], n: usize) -> Option<Vec<usize>> {
    let mut source = Vec::with_capacity(n);
    let mut row_used = vec![false; n];
    for t in 0..n {
        let ones: Vec<usize> = (0..n).filter(|&i| matrix[i * n + t] == 1.0).collect();
        let [i] = ones[..] else { return None };
        if std::mem::replace(&mut row_used[i], true) {
            return None;
        }
        source.push(i);
    }
    Some(source)
}

/// Gauss-Jordan inversion with partial pivoting.
fn invert(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = matrix.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p * n + col].abs().total_cmp(&a[q * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() < PIVOT_TOLERANCE {
            return Err(ImagingError::SingularSystem(format!(
                "no usable pivot in column {col} (sub-exposure {col} is not recoverable)"
            )));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
                inv.swap(pivot * n + k, col * n + k);
            }
        }
        let p = a[col * n + col];
        for k in 0..n {
            a[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f != 0.0 {
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    Ok(inv)
}

pub fn build_tile_system(code: &ExposureCode) -> Result<TileSystem> {
    let (tile, len) = (code.tile_size(), code.len());
    if len != tile * tile {
        return Err(ImagingError::UnsupportedShape { n: tile, t: len });
    }
    let mut matrix = vec![0.0; len * len];
    for i in 0..len {
        for t in 0..len {
            matrix[i * len + t] = code.get(i / tile, i % tile, t) as f64;
        }
    }
    let solver = match permutation_source(&matrix, len) {
        Some(source) => Solver::Permutation(source),
        None => Solver::Inverse(invert(&matrix, len)?),
    };
    Ok(TileSystem {
        tile,
        len,
        matrix,
        solver,
    })
}

/// Per-tile inversion of the coded image into a `(H/N)×(W/N)×T` video.
pub fn recover_lowres_coded(coded: &CodedImage, code: &TiledCode) -> Result<LowResVideo> {
    let system = build_tile_system(code.base())?;
    recover_with_system(coded, code, &system)
}

/// As [`recover_lowres_coded`] with a prebuilt system.
pub fn recover_with_system(coded: &CodedImage, code: &TiledCode, system: &TileSystem) -> Result<LowResVideo> {
    let n = system.tile;
    if coded.height() != code.height() || coded.width() != code.width() {
        return Err(ImagingError::dims(format!(
            "coded image {}x{} does not match code {}x{}",
            coded.height(),
            coded.width(),
            code.height(),
            code.width()
        )));
    }
    if code.base().tile_size() != n || code.len() != system.len {
        return Err(ImagingError::dims("tile system was built for a different code"));
    }
    let (lh, lw) = (coded.height() / n, coded.width() / n);
    let raw = coded.integrated();
    let width = coded.width();
    let mut frames = vec![vec![0.0; lh * lw]; system.len];
    let mut y = vec![0.0; n * n];
    let mut x = vec![0.0; system.len];
    for u in 0..lh {
        for v in 0..lw {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = raw[(u * n + i / n) * width + v * n + i % n];
            }
            system.solve(&y, &mut x);
            for (frame, &xt) in frames.iter_mut().zip(&x) {
                frame[u * lw + v] = xt;
            }
        }
    }
    let frames = frames
        .into_iter()
        .map(|f| Plane::clamped(lh, lw, f))
        .collect::<Result<Vec<_>>>()?;
    Ok(LowResVideo::new(VideoCube::new(frames)?))
}

/// Rearranges each `N×N` tile of the fully exposed image into a `T = N²`
/// temporal vector: frame `t` samples tile position `(t / N, t % N)`.
pub fn pixel_shuffle_image(blurred: &FullyExposedImage, tile: usize) -> Result<LowResVideo> {
    let (h, w) = blurred.values.dims();
    if tile == 0 || h % tile != 0 || w % tile != 0 {
        return Err(ImagingError::dims(format!(
            "image {h}x{w} is not divisible by tile size {tile}"
        )));
    }
    let (lh, lw) = (h / tile, w / tile);
    let frames = (0..tile * tile)
        .map(|t| {
            let (di, dj) = (t / tile, t % tile);
            let data = (0..lh)
                .flat_map(|u| (0..lw).map(move |v| (u, v)))
                .map(|(u, v)| blurred.values.get(u * tile + di, v * tile + dj))
                .collect();
            Plane::from_vec_unchecked(lh, lw, data)
        })
        .collect();
    Ok(LowResVideo::new(VideoCube::new(frames)?))
}

/// Inverse of [`pixel_shuffle_image`].
pub fn inverse_pixel_shuffle(video: &LowResVideo, tile: usize) -> Result<FullyExposedImage> {
    if tile == 0 || video.len() != tile * tile {
        return Err(ImagingError::dims(format!(
            "video has {} frames, tile size {tile} needs {}",
            video.len(),
            tile * tile
        )));
    }
    let (lh, lw) = (video.height(), video.width());
    let (h, w) = (lh * tile, lw * tile);
    let mut data = vec![0.0; h * w];
    for t in 0..tile * tile {
        let (di, dj) = (t / tile, t % tile);
        for u in 0..lh {
            for v in 0..lw {
                data[(u * tile + di) * w + v * tile + dj] = video.at(t, u, v);
            }
        }
    }
    Ok(FullyExposedImage::new(Plane::from_vec_unchecked(h, w, data)))
}
