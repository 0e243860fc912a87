//! Deterministic synthetic clips: smooth textured rectangles moving over
//! static textured backgrounds, or a whole textured frame panning.

use std::f64::consts::TAU;
use std::path::PathBuf;

use c2b_core::VideoCube;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ClipDataset;
use crate::error::{Result, TrainError};

/// What moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthShape {
    /// A textured rectangle over a static background.
    Rect { height: usize, width: usize },
    /// The whole frame translates.
    Pan,
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub shape: SynthShape,
    /// `(x, y)` displacement in pixels per frame; positive x moves right.
    pub velocity: (i32, i32),
    pub seed: u64,
}

impl SynthSpec {
    /// Same scenes with the velocity negated. Trajectories are centred on
    /// the middle frame, so the result is each clip played backwards.
    pub fn reversed(&self) -> SynthSpec {
        SynthSpec {
            velocity: (-self.velocity.0, -self.velocity.1),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.count == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(TrainError::Data("synthetic spec needs positive count, frames and dims".into()));
        }
        if let SynthShape::Rect { height, width } = self.shape {
            if height == 0 || width == 0 || height > self.height || width > self.width {
                return Err(TrainError::Data(format!(
                    "rectangle {height}x{width} does not fit {}x{} frames",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Sum of a few low-frequency oriented sinusoids around a base level.
#[derive(Debug, Clone)]
struct Texture {
    base: f64,
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, base: f64, amplitude: f64) -> Self {
        let k = 4;
        let waves = (0..k)
            .map(|_| {
                let period = rng.random_range(12.0..32.0);
                let angle = rng.random_range(0.0..TAU);
                let phase = rng.random_range(0.0..TAU);
                let amp = amplitude / k as f64 * rng.random_range(0.5..1.0);
                (angle.cos() * TAU / period, angle.sin() * TAU / period, phase, amp)
            })
            .collect();
        Texture { base, waves }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        self.base
            + self
                .waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin())
                .sum::<f64>()
    }
}

/// Alpha of a rectangle edge with a two-pixel ramp, in local coordinates.
fn edge_alpha(d: f64, len: usize) -> f64 {
    let inside = d.min(len as f64 - 1.0 - d);
    ((inside + 1.0) / 3.0).clamp(0.0, 1.0)
}

fn render_clip(spec: &SynthSpec, index: usize) -> Result<VideoCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let bg_base = rng.random_range(0.3..0.7);
    let background = Texture::random(&mut rng, bg_base, 0.25);
    let fg_base = if bg_base < 0.5 {
        rng.random_range(0.65..0.8)
    } else {
        rng.random_range(0.2..0.35)
    };
    let foreground = Texture::random(&mut rng, fg_base, 0.15);
    let (vx, vy) = (spec.velocity.0 as f64, spec.velocity.1 as f64);
    let mid = (spec.frames as f64 - 1.0) / 2.0;

    match spec.shape {
        SynthShape::Pan => {
            let (ox, oy) = (rng.random_range(0.0..64.0_f64).floor(), rng.random_range(0.0..64.0_f64).floor());
            Ok(VideoCube::from_fn(spec.height, spec.width, spec.frames, |t, y, x| {
                let s = t as f64 - mid;
                background.at(y as f64 - vy * s + oy, x as f64 - vx * s + ox)
            })?)
        }
        SynthShape::Rect { height: rh, width: rw } => {
            let cx = rng.random_range(0..=spec.width - rw) as f64;
            let cy = rng.random_range(0..=spec.height - rh) as f64;
            Ok(VideoCube::from_fn(spec.height, spec.width, spec.frames, |t, y, x| {
                let s = t as f64 - mid;
                let (left, top) = (cx + vx * s, cy + vy * s);
                let (lx, ly) = (x as f64 - left, y as f64 - top);
                let bg = background.at(y as f64, x as f64);
                let alpha = edge_alpha(lx, rw) * edge_alpha(ly, rh);
                if alpha <= 0.0 {
                    bg
                } else {
                    alpha * foreground.at(ly, lx) + (1.0 - alpha) * bg
                }
            })?)
        }
    }
}

/// Generates `spec.count` clips; clip `i` depends only on the seed and `i`.
pub fn synth_dataset(spec: &SynthSpec) -> Result<ClipDataset> {
    spec.validate()?;
    let clips = (0..spec.count)
        .map(|i| render_clip(spec, i))
        .collect::<Result<Vec<_>>>()?;
    let sources = (0..spec.count)
        .map(|i| {
            PathBuf::from(format!(
                "synthetic/seed{}/v{}_{}/{i}",
                spec.seed, spec.velocity.0, spec.velocity.1
            ))
        })
        .collect();
    ClipDataset::new(clips, sources)
}
