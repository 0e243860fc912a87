//! Per-pixel binary exposure codes.
//!
//! An [`ExposureCode`] is an `N×N×T` binary mask; [`TiledCode`] repeats it
//! over an `H×W` frame. The plain-text form is a header line `N T` followed by
//! `T` blocks of `N` rows, each row holding `N` space-separated `0`/`1` digits.
//! Blank lines between blocks are accepted and emitted.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ImagingError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExposureCode {
    tile: usize,
    len: usize,
    // indexed [t][i][j]
    mask: Vec<u8>,
}

impl ExposureCode {
    /// Builds a code from a mask laid out as `mask[(t * N + i) * N + j]`.
    ///
    /// Every entry must be 0 or 1 and every spatial position must open in at
    /// least one sub-exposure.
    pub fn new(tile: usize, len: usize, mask: Vec<u8>) -> Result<Self> {
        if tile == 0 || len == 0 {
            return Err(ImagingError::dims(format!("code needs N, T >= 1 (got N={tile}, T={len})")));
        }
        if mask.len() != tile * tile * len {
            return Err(ImagingError::dims(format!(
                "code {tile}x{tile}x{len} needs {} entries, got {}",
                tile * tile * len,
                mask.len()
            )));
        }
        if let Some(v) = mask.iter().find(|&&v| v > 1) {
            return Err(ImagingError::InvalidValue(format!("code entry {v} is not binary")));
        }
        let code = ExposureCode { tile, len, mask };
        for i in 0..tile {
            for j in 0..tile {
                if code.activation(i, j) == 0 {
                    return Err(ImagingError::DegenerateCode(format!(
                        "position ({i}, {j}) is never exposed"
                    )));
                }
            }
        }
        Ok(code)
    }

    pub fn from_fn(tile: usize, len: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut mask = Vec::with_capacity(tile * tile * len);
        for t in 0..len {
            for i in 0..tile {
                for j in 0..tile {
                    mask.push(f(i, j, t) as u8);
                }
            }
        }
        ExposureCode::new(tile, len, mask)
    }

    /// Sequential impulse code: frame `t` opens only the tile position `t` in
    /// raster order, `(t / N, t % N)`.
    pub fn impulse(tile: usize, len: usize) -> Result<Self> {
        if len != tile * tile {
            return Err(ImagingError::dims(format!(
                "impulse code needs T = N^2, got N={tile}, T={len}"
            )));
        }
        ExposureCode::from_fn(tile, len, |i, j, t| i * tile + j == t)
    }

    /// The `1 − C` code. Fails when some position is open in every frame.
    pub fn complement(&self) -> Result<Self> {
        let mask = self.mask.iter().map(|&v| 1 - v).collect();
        ExposureCode::new(self.tile, self.len, mask)
            .map_err(|_| ImagingError::DegenerateCode("a position is exposed in every sub-exposure, so the complementary bucket never integrates light there".into()))
    }

    pub fn tile_size(&self) -> usize {
        self.tile
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, t: usize) -> u8 {
        self.mask[(t * self.tile + i) * self.tile + j]
    }

    /// Number of sub-exposures in which position `(i, j)` is open.
    pub fn activation(&self, i: usize, j: usize) -> usize {
        (0..self.len).map(|t| self.get(i, j, t) as usize).sum()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.mask
    }

    /// True when each position opens exactly once and each frame opens exactly one position.
    pub fn is_impulse(&self) -> bool {
        let n = self.tile;
        if self.len != n * n {
            return false;
        }
        let per_pos = (0..n).all(|i| (0..n).all(|j| self.activation(i, j) == 1));
        let per_frame = (0..self.len)
            .all(|t| self.mask[t * n * n..(t + 1) * n * n].iter().map(|&v| v as usize).sum::<usize>() == 1);
        per_pos && per_frame
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.tile, self.len);
        for t in 0..self.len {
            if t > 0 {
                out.push('\n');
            }
            for i in 0..self.tile {
                let row: Vec<&str> = (0..self.tile)
                    .map(|j| if self.get(i, j, t) == 1 { "1" } else { "0" })
                    .collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ImagingError::CodeFormat("empty code file".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| ImagingError::CodeFormat(format!("bad header {header:?}: {e}")))?;
        let [tile, len] = nums[..] else {
            return Err(ImagingError::CodeFormat(format!("header must be \"N T\", got {header:?}")));
        };
        let mut mask = Vec::with_capacity(tile * tile * len);
        for row_idx in 0..tile * len {
            let line = lines.next().ok_or_else(|| {
                ImagingError::CodeFormat(format!("expected {} rows, found {row_idx}", tile * len))
            })?;
            let row: Vec<u8> = line
                .split_whitespace()
                .map(|s| match s {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(ImagingError::CodeFormat(format!("entry {other:?} is not 0 or 1"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != tile {
                return Err(ImagingError::CodeFormat(format!(
                    "row {row_idx} has {} entries, expected {tile}",
                    row.len()
                )));
            }
            mask.extend(row);
        }
        if let Some(extra) = lines.next() {
            return Err(ImagingError::CodeFormat(format!("unexpected trailing line {extra:?}")));
        }
        ExposureCode::new(tile, len, mask)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ImagingError::Io {
            path: path.to_owned(),
            source,
        })?;
        ExposureCode::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| ImagingError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

/// An [`ExposureCode`] repeated over an `H×W` frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TiledCode {
    base: ExposureCode,
    height: usize,
    width: usize,
    // indexed [t][y][x]
    mask: Vec<u8>,
}

impl TiledCode {
    pub fn new(base: &ExposureCode, height: usize, width: usize) -> Result<Self> {
        let n = base.tile;
        if height == 0 || width == 0 || !height.is_multiple_of(n) || !width.is_multiple_of(n) {
            return Err(ImagingError::dims(format!(
                "frame {height}x{width} is not divisible by tile size {n}"
            )));
        }
        let mut mask = Vec::with_capacity(height * width * base.len);
        for t in 0..base.len {
            for y in 0..height {
                for x in 0..width {
                    mask.push(base.get(y % n, x % n, t));
                }
            }
        }
        Ok(TiledCode {
            base: base.clone(),
            height,
            width,
            mask,
        })
    }

    pub fn base(&self) -> &ExposureCode {
        &self.base
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.base.len
    }

    pub fn is_empty(&self) -> bool {
        self.base.len == 0
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, t: usize) -> u8 {
        self.mask[(t * self.height + y) * self.width + x]
    }

    pub fn activation(&self, y: usize, x: usize) -> usize {
        let n = self.base.tile;
        self.base.activation(y % n, x % n)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.mask
    }
}

pub fn make_impulse_code(tile: usize, len: usize) -> Result<ExposureCode> {
    ExposureCode::impulse(tile, len)
}

pub fn tile_code(code: &ExposureCode, height: usize, width: usize) -> Result<TiledCode> {
    TiledCode::new(code, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_3x9_raster_order() {
        let code = make_impulse_code(3, 9).unwrap();
        for t in 0..9 {
            for i in 0..3 {
                for j in 0..3 {
                    let expect = (i, j) == (t / 3, t % 3);
                    assert_eq!(code.get(i, j, t) == 1, expect, "t={t} ({i},{j})");
                }
            }
        }
        assert!(code.is_impulse());
    }

    #[test]
    fn impulse_1x1_is_always_open() {
        let code = make_impulse_code(1, 1).unwrap();
        assert_eq!(code.as_slice(), &[1]);
        assert_eq!(code.activation(0, 0), 1);
    }

    #[test]
    fn impulse_2x4_exhaustive_property() {
        let code = make_impulse_code(2, 4).unwrap();
        let expected = [(0, 0), (0, 1), (1, 0), (1, 1)];
        for (t, &(ei, ej)) in expected.iter().enumerate() {
            let mut open = vec![];
            for i in 0..2 {
                for j in 0..2 {
                    if code.get(i, j, t) == 1 {
                        open.push((i, j));
                    }
                }
            }
            assert_eq!(open, vec![(ei, ej)]);
        }
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!((0..4).filter(|&t| code.get(i, j, t) == 1).count(), 1);
            }
        }
    }

    #[test]
    fn impulse_rejects_wrong_length() {
        assert!(matches!(make_impulse_code(3, 8), Err(ImagingError::DimensionMismatch(_))));
    }

    #[test]
    fn rejects_never_exposed_and_non_binary() {
        let mut mask = vec![0u8; 4];
        mask[0] = 1;
        assert!(matches!(ExposureCode::new(2, 1, mask), Err(ImagingError::DegenerateCode(_))));
        assert!(ExposureCode::new(1, 2, vec![2, 0]).is_err());
    }

    #[test]
    fn tiling_repeats_base() {
        let code = make_impulse_code(3, 9).unwrap();
        let tiled = tile_code(&code, 6, 6).unwrap();
        for t in 0..9 {
            for y in 0..6 {
                for x in 0..6 {
                    assert_eq!(tiled.get(y, x, t), code.get(y % 3, x % 3, t));
                }
            }
        }
        let same = tile_code(&code, 3, 3).unwrap();
        assert_eq!(same.as_slice(), code.as_slice());
        assert!(tile_code(&code, 7, 6).is_err());
        assert!(tile_code(&code, 6, 4).is_err());
    }

    #[test]
    fn tiled_240_each_pixel_open_once() {
        let code = make_impulse_code(3, 9).unwrap();
        let tiled = tile_code(&code, 240, 240).unwrap();
        let total: usize = tiled.as_slice().iter().map(|&v| v as usize).sum();
        assert_eq!(total, 240 * 240);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let code = ExposureCode::from_fn(2, 3, |i, j, t| (i + j + t) % 2 == 0 || t == 2).unwrap();
        let text = code.to_text();
        assert!(text.starts_with("2 3\n"));
        assert_eq!(ExposureCode::from_text(&text).unwrap(), code);
        assert!(ExposureCode::from_text("2 1\n1 1\n1\n").is_err());
        assert!(ExposureCode::from_text("1 1\n2\n").is_err());
        assert!(ExposureCode::from_text("").is_err());
        assert!(ExposureCode::from_text("1 1\n1\n1\n").is_err());
    }

    #[test]
    fn complement_of_all_ones_is_degenerate() {
        let ones = ExposureCode::new(1, 2, vec![1, 1]).unwrap();
        assert!(matches!(ones.complement(), Err(ImagingError::DegenerateCode(_))));
        let imp = make_impulse_code(2, 4).unwrap();
        let comp = imp.complement().unwrap();
        assert_eq!(comp.activation(1, 1), 3);
    }
}
