//! RGB-D frames and 8-bit PNG helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Rounds `v` (clamped to [0, 1]) to the nearest 8-bit level, returned as the
/// exact `f32` value `k / 255`. Frames produced by the renderer carry only
/// such values, so PNG storage is lossless.
pub fn quantize_unit(v: f64) -> f32 {
    level_to_unit(unit_to_level(v as f32))
}

pub fn unit_to_level(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

pub fn level_to_unit(level: u8) -> f32 {
    level as f32 / 255.0
}

/// Egocentric observation: interleaved RGB in [0, 1], planar metric depth
/// and a validity mask, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRGBD {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    /// Meters; only meaningful where `valid` is set. Invalid pixels hold 0.
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FrameRGBD {
    /// Black, fully invalid frame.
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            rgb: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    /// RGB-only frame with every pixel invalid.
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<f32>) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::invalid(format!(
                "rgb buffer of {} values does not match {width}x{height}",
                rgb.len()
            )));
        }
        let mut f = Self::new(width, height);
        f.rgb = rgb;
        Ok(f)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn rgb_at(&self, idx: usize) -> [f32; 3] {
        [self.rgb[3 * idx], self.rgb[3 * idx + 1], self.rgb[3 * idx + 2]]
    }

    pub fn set_rgb(&mut self, idx: usize, c: [f32; 3]) {
        self.rgb[3 * idx..3 * idx + 3].copy_from_slice(&c);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_size(&self, other: &FrameRGBD) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        if self.rgb.len() != 3 * n || self.depth.len() != n || self.valid.len() != n {
            return Err(Error::invalid("frame buffers disagree with dimensions"));
        }
        if let Some(c) = self.rgb.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("rgb value {c} outside [0, 1]")));
        }
        for i in 0..n {
            if self.valid[i] && !(self.depth[i].is_finite() && self.depth[i] > 0.0) {
                return Err(Error::invalid(format!(
                    "valid pixel {i} has non-positive depth {}",
                    self.depth[i]
                )));
            }
        }
        Ok(())
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.rgb.iter().map(|v| unit_to_level(*v)).collect()
    }

    /// Snaps every channel to the nearest 8-bit level.
    pub fn quantize(&mut self) {
        for v in &mut self.rgb {
            *v = level_to_unit(unit_to_level(*v));
        }
    }
}

pub fn write_png_rgb(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Rgb, data)
}

pub fn write_png_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    writer
        .finish()
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Reads an 8-bit RGB (or RGBA, alpha dropped) PNG.
pub fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let field = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(&field, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(&field, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(&field, e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(&field, "expected 8-bit channels"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => data.iter().flat_map(|g| [*g, *g, *g]).collect(),
        other => return Err(Error::format(&field, format!("unsupported color type {other:?}"))),
    };
    Ok((w, h, rgb))
}

/// Loads a PNG as an RGB-only frame (all pixels invalid).
pub fn read_frame_png(path: &Path) -> Result<FrameRGBD> {
    let (w, h, bytes) = read_png_rgb(path)?;
    FrameRGBD::from_rgb(w, h, bytes.into_iter().map(level_to_unit).collect())
}
