//! Variance-preserving cosine noise schedule and the strided deterministic
//! sampler's step sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
/// Lower bound on the cumulative signal fraction, keeping the last step's
/// signal coefficient away from zero.
pub const MIN_ALPHA_BAR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("noise schedule needs at least one step"));
        }
        let f = |t: f64| {
            let x = (t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
            x.cos() * x.cos()
        };
        let f0 = f(0.0);
        let alpha_bar = (0..steps)
            .map(|i| (f((i + 1) as f64 / steps as f64) / f0).clamp(MIN_ALPHA_BAR, 1.0))
            .collect();
        Ok(Self { alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn signal(&self, tau: usize) -> f64 {
        self.alpha_bar[tau].sqrt()
    }

    pub fn noise(&self, tau: usize) -> f64 {
        (1.0 - self.alpha_bar[tau]).sqrt()
    }

    /// `count` evenly spaced steps from the noisiest down to step 0.
    pub fn sampling_steps(&self, count: usize) -> Vec<usize> {
        let t = self.steps();
        let count = count.clamp(1, t);
        (0..count).rev().map(|k| k * t / count).collect()
    }
}
