//! Invertible space-to-depth codec standing in for a learned autoencoder.
//!
//! A frame of `H×W×3` becomes a latent of `3f² × H/f × W/f`. Latent channel
//! `(c·f + dy)·f + dx` of cell `(y, x)` holds color channel `c` of pixel
//! `(f·y + dy, f·x + dx)`, mapped through `l = (v − 0.5)·4`. The round trip
//! is bit-exact for every multiple of 2⁻²⁹ in [0, 1], which includes all 8-bit
//! levels and all 24-bit fractions.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::frame::FrameRGBD;

pub const LATENT_OFFSET: f64 = 0.5;
pub const LATENT_SCALE: f64 = 4.0;
/// Latent values of the all-black and all-white frames.
pub const LATENT_MIN: f64 = (0.0 - LATENT_OFFSET) * LATENT_SCALE;
pub const LATENT_MAX: f64 = (1.0 - LATENT_OFFSET) * LATENT_SCALE;

/// `channels × height × width`, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One row per cell (row-major over `(y, x)`), one column per channel.
    pub fn to_tokens(&self) -> Matrix {
        let cells = self.height * self.width;
        let mut m = Matrix::zeros(cells, self.channels);
        for c in 0..self.channels {
            for cell in 0..cells {
                m.data[cell * self.channels + c] = self.data[c * cells + cell];
            }
        }
        m
    }

    pub fn from_tokens(m: &Matrix, height: usize, width: usize) -> Result<Self> {
        let cells = height * width;
        if m.rows != cells {
            return Err(Error::invalid(format!(
                "{} tokens for a {height}x{width} latent",
                m.rows
            )));
        }
        let mut g = Self::zeros(m.cols, height, width);
        for c in 0..m.cols {
            for cell in 0..cells {
                g.data[c * cells + cell] = m.data[cell * m.cols + c];
            }
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codec {
    pub factor: usize,
}

impl Codec {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("codec factor must be positive"));
        }
        Ok(Self { factor })
    }

    pub fn channels(&self) -> usize {
        3 * self.factor * self.factor
    }

    pub fn latent_shape(&self, width: usize, height: usize) -> Result<(usize, usize, usize)> {
        let f = self.factor;
        if width == 0 || height == 0 || !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "{width}x{height} frame is not divisible by codec factor {f}"
            )));
        }
        Ok((self.channels(), height / f, width / f))
    }

    pub fn encode(&self, frame: &FrameRGBD) -> Result<LatentGrid> {
        let (c_out, h, w) = self.latent_shape(frame.width, frame.height)?;
        if frame.rgb.len() != 3 * frame.pixel_count() {
            return Err(Error::invalid("frame rgb buffer has the wrong length"));
        }
        let f = self.factor;
        let mut g = LatentGrid::zeros(c_out, h, w);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    for dy in 0..f {
                        for dx in 0..f {
                            let px = (f * y + dy) * frame.width + f * x + dx;
                            let ch = (c * f + dy) * f + dx;
                            let v = frame.rgb[3 * px + c] as f64;
                            g.data[(ch * h + y) * w + x] = (v - LATENT_OFFSET) * LATENT_SCALE;
                        }
                    }
                }
            }
        }
        Ok(g)
    }

    /// Inverse of [`Codec::encode`]; the result carries no depth (all pixels
    /// invalid). Values outside the unit range are kept as is.
    pub fn decode(&self, g: &LatentGrid) -> Result<FrameRGBD> {
        let f = self.factor;
        if g.channels != self.channels() || g.data.len() != g.channels * g.height * g.width {
            return Err(Error::invalid(format!(
                "latent {:?} does not match codec factor {f}",
                g.shape()
            )));
        }
        let (h, w) = (g.height, g.width);
        let mut frame = FrameRGBD::new(w * f, h * f);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    for dy in 0..f {
                        for dx in 0..f {
                            let px = (f * y + dy) * frame.width + f * x + dx;
                            let ch = (c * f + dy) * f + dx;
                            let l = g.data[(ch * h + y) * w + x];
                            frame.rgb[3 * px + c] = (l / LATENT_SCALE + LATENT_OFFSET) as f32;
                        }
                    }
                }
            }
        }
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn desk_shape() {
        let codec = Codec::new(4).unwrap();
        let g = codec.encode(&FrameRGBD::new(64, 64)).unwrap();
        assert_eq!(g.shape(), (48, 16, 16));
        assert!(g.data.iter().all(|v| *v == -2.0));
        assert_eq!(LATENT_MIN, -2.0);
    }

    #[test]
    fn indivisible_rejected() {
        let codec = Codec::new(4).unwrap();
        assert!(codec.encode(&FrameRGBD::new(10, 8)).is_err());
        assert!(Codec::new(0).is_err());
    }

    #[test]
    fn channel_layout() {
        let codec = Codec::new(2).unwrap();
        let mut f = FrameRGBD::new(4, 2);
        // pixel (x=3, y=1), green
        f.rgb[3 * (4 + 3) + 1] = 1.0;
        let g = codec.encode(&f).unwrap();
        let ch = (2 + 1) * 2 + 1;
        assert_eq!(g.data[ch * 2 + 1], 2.0);
        assert_eq!(g.data.iter().filter(|v| **v == 2.0).count(), 1);
    }

    #[test]
    fn tokens_round_trip() {
        let g = LatentGrid {
            channels: 2,
            height: 2,
            width: 3,
            data: (0..12).map(|v| v as f64).collect(),
        };
        let t = g.to_tokens();
        assert_eq!(t.row(1), &[1.0, 7.0]);
        assert_eq!(LatentGrid::from_tokens(&t, 2, 3).unwrap(), g);
    }

    proptest! {
        #[test]
        fn codec_is_bit_exact(raw in proptest::collection::vec(0u32..=1 << 24, 3 * 8 * 12), factor in prop_oneof![Just(1usize), Just(2), Just(4)]) {
            let rgb: Vec<f32> = raw.iter().map(|k| *k as f32 / (1u32 << 24) as f32).collect();
            let frame = FrameRGBD::from_rgb(12, 8, rgb).unwrap();
            let codec = Codec::new(factor).unwrap();
            let back = codec.decode(&codec.encode(&frame).unwrap()).unwrap();
            prop_assert_eq!(
                back.rgb.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                frame.rgb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
