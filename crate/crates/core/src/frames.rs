//! Frame-directory I/O.
//!
//! A video on disk is a directory of zero-padded, frame-numbered 8-bit
//! grayscale images (`frame_0000.png`, ...). Reading accepts PNG and the PNM
//! family in lexicographic filename order; color files are reduced to luma
//! with Rec. 601 weights unless [`ColorMode::PerChannel`] is requested.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{ImagingError, Result};
use crate::video::{Plane, VideoCube};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorMode {
    /// Rec. 601 luma.
    #[default]
    Luma,
    /// R, G and B as three independent planes.
    PerChannel,
}

/// `[0, 1] → 0..=255`, clamped, rounding half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> ImagingError + '_ {
    move |source| ImagingError::Image {
        path: path.to_owned(),
        source,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ImagingError + '_ {
    move |source| ImagingError::Io {
        path: path.to_owned(),
        source,
    }
}

fn decode_channels(img: DynamicImage, mode: ColorMode) -> Result<Vec<Plane>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray_scale = match &img {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => Some(255.0),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => Some(65535.0),
        _ => None,
    };
    if let Some(scale) = gray_scale {
        let data: Vec<f64> = if scale == 255.0 {
            img.to_luma8().into_raw().into_iter().map(|v| v as f64 / scale).collect()
        } else {
            img.to_luma16().into_raw().into_iter().map(|v| v as f64 / scale).collect()
        };
        let plane = Plane::new(h, w, data)?;
        return Ok(match mode {
            ColorMode::Luma => vec![plane],
            ColorMode::PerChannel => vec![plane.clone(), plane.clone(), plane],
        });
    }
    let rgb = img.to_rgb32f().into_raw();
    match mode {
        ColorMode::Luma => {
            let data = rgb
                .chunks_exact(3)
                .map(|p| {
                    (LUMA_WEIGHTS[0] * p[0] as f64 + LUMA_WEIGHTS[1] * p[1] as f64 + LUMA_WEIGHTS[2] * p[2] as f64)
                        .clamp(0.0, 1.0)
                })
                .collect();
            Ok(vec![Plane::new(h, w, data)?])
        }
        ColorMode::PerChannel => (0..3)
            .map(|c| Plane::clamped(h, w, rgb.chunks_exact(3).map(|p| p[c] as f64).collect()))
            .collect(),
    }
}

pub fn load_image(path: &Path) -> Result<Plane> {
    let img = image::open(path).map_err(image_err(path))?;
    Ok(decode_channels(img, ColorMode::Luma)?.remove(0))
}

pub fn load_image_channels(path: &Path, mode: ColorMode) -> Result<Vec<Plane>> {
    let img = image::open(path).map_err(image_err(path))?;
    decode_channels(img, mode)
}

/// Image files in `dir`, sorted by name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(ImagingError::Frames(format!("{}: no image files", dir.display())));
    }
    Ok(files)
}

/// Loads every frame in `dir` as luma, normalized to `[0, 1]`.
pub fn load_frame_directory(dir: &Path) -> Result<Vec<Plane>> {
    let mut channels = load_frame_directory_with(dir, ColorMode::Luma)?;
    Ok(channels.remove(0))
}

/// Loads every frame in `dir`; the result is indexed `[channel][frame]`.
pub fn load_frame_directory_with(dir: &Path, mode: ColorMode) -> Result<Vec<Vec<Plane>>> {
    let files = list_frames(dir)?;
    let nch = match mode {
        ColorMode::Luma => 1,
        ColorMode::PerChannel => 3,
    };
    let mut out: Vec<Vec<Plane>> = vec![Vec::with_capacity(files.len()); nch];
    let mut dims = None;
    for path in &files {
        let planes = load_image_channels(path, mode)?;
        let d = planes[0].dims();
        if *dims.get_or_insert(d) != d {
            let (eh, ew) = dims.unwrap();
            return Err(ImagingError::Frames(format!(
                "{}: frame is {}x{}, earlier frames are {eh}x{ew}",
                path.display(),
                d.0,
                d.1
            )));
        }
        for (c, p) in planes.into_iter().enumerate() {
            out[c].push(p);
        }
    }
    Ok(out)
}

pub fn load_video(dir: &Path) -> Result<VideoCube> {
    VideoCube::new(load_frame_directory(dir)?)
}

pub fn to_gray_image(plane: &Plane) -> GrayImage {
    let mut img = GrayImage::new(plane.width() as u32, plane.height() as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        *px = Luma([quantize(plane.get(y as usize, x as usize))]);
    }
    img
}

/// Saves as 8-bit grayscale; the format follows the file extension.
pub fn save_image(path: &Path, plane: &Plane) -> Result<()> {
    to_gray_image(plane).save(path).map_err(image_err(path))
}

pub fn frame_file_name(index: usize, count: usize) -> String {
    let digits = count.saturating_sub(1).to_string().len().max(4);
    format!("frame_{index:0digits$}.png")
}

pub fn write_frame_directory(dir: &Path, frames: &[Plane]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_file_name(i, frames.len()));
            save_image(&path, f)?;
            Ok(path)
        })
        .collect()
}

pub fn write_video(dir: &Path, video: &VideoCube) -> Result<Vec<PathBuf>> {
    write_frame_directory(dir, video.frames())
}
