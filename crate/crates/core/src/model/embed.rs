//! Sine/cosine action features and the diffusion-step embedding.

use std::f64::consts::PI;

use crate::geometry::Action4;

/// Period of the first action frequency; period `j` is `2·√2^j`.
pub const BASE_PERIOD: f64 = 2.0;
pub const PERIOD_RATIO: f64 = std::f64::consts::SQRT_2;

/// `d/8` sin/cos pairs per action component, laid out component-major:
/// entry `c·d/4 + 2j` is `sin(2π a_c / P_j)`, the next one the cosine.
pub fn action_features(a: &Action4, d: usize) -> Vec<f64> {
    assert!(d.is_multiple_of(8) && d > 0, "embedding width must be a positive multiple of 8");
    let per = d / 8;
    let mut out = Vec::with_capacity(d);
    for v in a.to_array() {
        let mut period = BASE_PERIOD;
        for _ in 0..per {
            let arg = 2.0 * PI * v / period;
            out.push(arg.sin());
            out.push(arg.cos());
            period *= PERIOD_RATIO;
        }
    }
    out
}

/// Transformer-style sinusoidal embedding of the diffusion step: first half
/// sines, second half cosines, frequencies `10000^(−i/(d/2))`.
pub fn timestep_embedding(tau: usize, d: usize) -> Vec<f64> {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = tau as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Action features plus the step embedding, element-wise.
pub fn embed_action(a: &Action4, tau: usize, d: usize) -> Vec<f64> {
    action_features(a, d)
        .into_iter()
        .zip(timestep_embedding(tau, d))
        .map(|(x, t)| x + t)
        .collect()
}
