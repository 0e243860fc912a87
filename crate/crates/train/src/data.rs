//! Clip datasets: windows of consecutive frames and their spatial patches.

use std::path::{Path, PathBuf};

use c2b_core::frames::{list_frames, load_frame_directory};
use c2b_core::{Plane, VideoCube};

use crate::error::{Result, TrainError};

/// Equal-length clips in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipDataset {
    pub clips: Vec<VideoCube>,
    /// Where each clip came from (a directory, or a synthetic label).
    pub sources: Vec<PathBuf>,
}

impl ClipDataset {
    pub fn new(clips: Vec<VideoCube>, sources: Vec<PathBuf>) -> Result<Self> {
        if clips.len() != sources.len() {
            return Err(TrainError::Data(format!(
                "{} clips but {} source labels",
                clips.len(),
                sources.len()
            )));
        }
        if let Some(first) = clips.first() {
            let len = first.len();
            if let Some(bad) = clips.iter().find(|c| c.len() != len) {
                return Err(TrainError::Data(format!(
                    "clips must share a frame count: {len} vs {}",
                    bad.len()
                )));
            }
        }
        Ok(ClipDataset { clips, sources })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn extend(&mut self, other: ClipDataset) -> Result<()> {
        let mut clips = std::mem::take(&mut self.clips);
        let mut sources = std::mem::take(&mut self.sources);
        clips.extend(other.clips);
        sources.extend(other.sources);
        *self = ClipDataset::new(clips, sources)?;
        Ok(())
    }

    /// Even-indexed clips for training, odd-indexed for validation.
    pub fn split_by_parity(&self) -> (ClipDataset, ClipDataset) {
        let pick = |parity: usize| {
            let idx = (0..self.len()).filter(|i| i % 2 == parity);
            ClipDataset {
                clips: idx.clone().map(|i| self.clips[i].clone()).collect(),
                sources: idx.map(|i| self.sources[i].clone()).collect(),
            }
        };
        (pick(0), pick(1))
    }

    /// Replaces every clip by its non-overlapping `size × size` patches.
    pub fn into_patches(self, size: usize) -> Result<ClipDataset> {
        let mut clips = Vec::new();
        let mut sources = Vec::new();
        for (clip, src) in self.clips.iter().zip(self.sources) {
            for p in extract_patches(clip, size)? {
                clips.push(p);
                sources.push(src.clone());
            }
        }
        ClipDataset::new(clips, sources)
    }
}

/// Cuts `frames` into clips of `t` consecutive frames, starting every
/// `stride` frames.
pub fn window_clips(frames: &[Plane], t: usize, stride: usize) -> Result<Vec<VideoCube>> {
    if t == 0 || stride == 0 {
        return Err(TrainError::Data("clip length and stride must be positive".into()));
    }
    if frames.len() < t {
        return Err(TrainError::Data(format!(
            "{} frames are too few for a {t}-frame clip",
            frames.len()
        )));
    }
    (0..=(frames.len() - t) / stride)
        .map(|k| Ok(VideoCube::new(frames[k * stride..k * stride + t].to_vec())?))
        .collect()
}

/// Non-overlapping `size × size` crops in raster order; edge remainders are
/// dropped.
pub fn extract_patches(clip: &VideoCube, size: usize) -> Result<Vec<VideoCube>> {
    if size == 0 || size > clip.height() || size > clip.width() {
        return Err(TrainError::Data(format!(
            "patch size {size} does not fit {}x{} frames",
            clip.height(),
            clip.width()
        )));
    }
    let mut out = Vec::new();
    for top in (0..=clip.height() - size).step_by(size) {
        for left in (0..=clip.width() - size).step_by(size) {
            out.push(clip.crop(top, left, size, size)?);
        }
    }
    Ok(out)
}

/// Loads every frame directory under `root` (or `root` itself when it holds
/// frames) and windows each into clips.
pub fn load_clip_dataset(root: &Path, t: usize, stride: usize) -> Result<ClipDataset> {
    let mut dirs = Vec::new();
    if !list_frames(root).map(|f| f.is_empty()).unwrap_or(true) {
        dirs.push(root.to_path_buf());
    } else {
        let entries = std::fs::read_dir(root).map_err(|source| TrainError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        for e in entries {
            let e = e.map_err(|source| TrainError::Io {
                path: root.to_path_buf(),
                source,
            })?;
            if e.path().is_dir() {
                dirs.push(e.path());
            }
        }
        dirs.sort();
    }
    if dirs.is_empty() {
        return Err(TrainError::Data(format!("no frame directories under {}", root.display())));
    }
    let mut clips = Vec::new();
    let mut sources = Vec::new();
    for d in dirs {
        let frames = load_frame_directory(&d)?;
        for c in window_clips(&frames, t, stride)? {
            clips.push(c);
            sources.push(d.clone());
        }
    }
    ClipDataset::new(clips, sources)
}
