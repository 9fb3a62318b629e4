//! Image and trajectory metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameRGBD;
use crate::geometry::{angle_diff, Pose4};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Default success radius for navigation episodes, meters.
pub const SUCCESS_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check_pair(a: &FrameRGBD, b: &FrameRGBD) -> Result<()> {
    if !a.same_size(b) || a.rgb.len() != b.rgb.len() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.rgb.len() != 3 * a.pixel_count() {
        return Err(Error::invalid("rgb buffer does not match dimensions"));
    }
    Ok(())
}

pub fn mse(a: &FrameRGBD, b: &FrameRGBD) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.rgb.len().max(1) as f64;
    Ok(a.rgb
        .iter()
        .zip(&b.rgb)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n)
}

/// `10·log10(1/mse)` for unit dynamic range, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean SSIM over all fully contained windows and the three channels.
/// Window statistics use the unbiased (n − 1) covariance. Images smaller
/// than the window use a window as large as the smaller side.
pub fn ssim(a: &FrameRGBD, b: &FrameRGBD) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width, a.height);
    let win = SSIM_WINDOW.min(w).min(h);
    if win < 2 {
        return Err(Error::invalid("image too small for SSIM"));
    }
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x: Vec<f64> = (0..w * h).map(|i| a.rgb[3 * i + c] as f64).collect();
        let y: Vec<f64> = (0..w * h).map(|i| b.rgb[3 * i + c] as f64).collect();
        for v0 in 0..=h - win {
            for u0 in 0..=w - win {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for v in v0..v0 + win {
                    for u in u0..u0 + win {
                        let (p, q) = (x[v * w + u], y[v * w + u]);
                        sx += p;
                        sy += q;
                        sxx += p * p;
                        syy += q * q;
                        sxy += p * q;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = (sxx - n * mx * mx) / (n - 1.0);
                let vy = (syy - n * my * my) / (n - 1.0);
                let cxy = (sxy - n * mx * my) / (n - 1.0);
                total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn image_metrics(pred: &FrameRGBD, gt: &FrameRGBD) -> Result<ImageMetrics> {
    let m = mse(pred, gt)?;
    Ok(ImageMetrics {
        mse: m,
        psnr: psnr_from_mse(m),
        ssim: ssim(pred, gt)?,
    })
}

/// A distance between images; smaller is more similar.
pub trait ImageDistance {
    fn name(&self) -> &str;
    fn distance(&self, a: &FrameRGBD, b: &FrameRGBD) -> Result<f64>;
}

pub struct MseDistance;

impl ImageDistance for MseDistance {
    fn name(&self) -> &str {
        "mse"
    }

    fn distance(&self, a: &FrameRGBD, b: &FrameRGBD) -> Result<f64> {
        mse(a, b)
    }
}

/// `1 − SSIM`.
pub struct SsimDistance;

impl ImageDistance for SsimDistance {
    fn name(&self) -> &str {
        "ssim"
    }

    fn distance(&self, a: &FrameRGBD, b: &FrameRGBD) -> Result<f64> {
        Ok(1.0 - ssim(a, b)?)
    }
}

pub fn distance_by_name(name: &str) -> Result<Box<dyn ImageDistance>> {
    match name {
        "mse" => Ok(Box::new(MseDistance)),
        "ssim" | "ssim-distance" => Ok(Box::new(SsimDistance)),
        other => Err(Error::invalid(format!("unknown image metric `{other}` (mse|ssim)"))),
    }
}

fn check_lengths(est: &[Pose4], gt: &[Pose4]) -> Result<()> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::invalid(format!(
            "trajectory lengths {} and {} must be equal and nonzero",
            est.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn sub(a: &Pose4, b: &Pose4) -> [f64; 3] {
    [a.x - b.x, a.y - b.y, a.z - b.z]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// RMS position error, no alignment.
pub fn ate(est: &[Pose4], gt: &[Pose4]) -> Result<f64> {
    check_lengths(est, gt)?;
    let s: f64 = est.iter().zip(gt).map(|(e, g)| norm(sub(e, g)).powi(2)).sum();
    Ok((s / est.len() as f64).sqrt())
}

fn relative_residuals(est: &[Pose4], gt: &[Pose4], delta: usize) -> Result<Vec<(f64, f64)>> {
    check_lengths(est, gt)?;
    if delta == 0 || est.len() <= delta {
        return Err(Error::invalid(format!(
            "relative error needs more than {delta} poses, got {}",
            est.len()
        )));
    }
    Ok((0..est.len() - delta)
        .map(|i| {
            let de = sub(&est[i + delta], &est[i]);
            let dg = sub(&gt[i + delta], &gt[i]);
            let t = norm([de[0] - dg[0], de[1] - dg[1], de[2] - dg[2]]);
            let ye = angle_diff(est[i + delta].yaw, est[i].yaw);
            let yg = angle_diff(gt[i + delta].yaw, gt[i].yaw);
            (t, angle_diff(ye, yg))
        })
        .collect())
}

/// RMS of the translation residual between `delta`-step displacements.
pub fn rpe(est: &[Pose4], gt: &[Pose4], delta: usize) -> Result<f64> {
    let r = relative_residuals(est, gt, delta)?;
    Ok((r.iter().map(|(t, _)| t * t).sum::<f64>() / r.len() as f64).sqrt())
}

/// RMS yaw residual of the same relative motions, radians; informational.
pub fn rpe_yaw(est: &[Pose4], gt: &[Pose4], delta: usize) -> Result<f64> {
    let r = relative_residuals(est, gt, delta)?;
    Ok((r.iter().map(|(_, y)| y * y).sum::<f64>() / r.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavOutcome {
    pub ne: f64,
    pub success: bool,
}

/// Navigation error and success; success requires `ne < threshold`.
pub fn nav_outcome(last: &Pose4, goal: &Pose4, threshold: f64) -> Result<NavOutcome> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("success threshold must be positive"));
    }
    let ne = norm(sub(last, goal));
    Ok(NavOutcome {
        ne,
        success: ne < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_frame(seed: u64, w: usize, h: usize) -> FrameRGBD {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FrameRGBD::from_rgb(w, h, (0..3 * w * h).map(|_| rng.random_range(0.2f32..0.8)).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = noise_frame(1, 12, 10);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.psnr, 99.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let a = FrameRGBD::from_rgb(8, 8, vec![0.25; 192]).unwrap();
        let b = FrameRGBD::from_rgb(8, 8, vec![0.35; 192]).unwrap();
        let m = image_metrics(&b, &a).unwrap();
        assert!((m.mse - 0.01).abs() < 1e-8);
        assert!((m.psnr - 20.0).abs() < 1e-5);
    }

    #[test]
    fn ssim_of_flat_images_follows_the_luminance_term() {
        // zero variance: SSIM reduces to (2 mx my + c1) / (mx² + my² + c1)
        let a = FrameRGBD::from_rgb(7, 7, vec![0.25; 147]).unwrap();
        let b = FrameRGBD::from_rgb(7, 7, vec![0.75; 147]).unwrap();
        let c1 = 0.01f64 * 0.01;
        let expect = (2.0 * 0.25 * 0.75 + c1) / (0.0625 + 0.5625 + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn negated_contrast_scores_lower_and_metrics_are_symmetric() {
        let a = noise_frame(2, 16, 16);
        let mut neg = a.clone();
        neg.rgb.iter_mut().for_each(|v| *v = 1.0 - *v);
        let s = ssim(&a, &neg).unwrap();
        assert!(s < ssim(&a, &a).unwrap());
        assert!(s < 0.0);
        let b = noise_frame(3, 16, 16);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
        assert!(ssim(&a, &FrameRGBD::new(8, 16)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn image_metrics_are_bounded_and_symmetric(s1 in 0u64..1000, s2 in 0u64..1000, w in 2usize..20, h in 2usize..20) {
            let (a, b) = (noise_frame(s1, w, h), noise_frame(s2 + 1000, w, h));
            let ab = image_metrics(&a, &b).unwrap();
            let ba = image_metrics(&b, &a).unwrap();
            proptest::prop_assert!(ab.mse >= 0.0 && ab.mse == ba.mse);
            proptest::prop_assert!(ab.ssim <= 1.0 + 1e-12 && ab.ssim >= -1.0 - 1e-12);
            proptest::prop_assert!((ab.ssim - ba.ssim).abs() < 1e-12);
            proptest::prop_assert!(ab.psnr > 0.0 && ab.psnr <= PSNR_CAP_DB);
        }
    }

    fn line(n: usize, step: f64) -> Vec<Pose4> {
        (0..n).map(|i| Pose4::new(i as f64 * step, 0.0, 10.0, 0.0)).collect()
    }

    #[test]
    fn trajectory_errors() {
        let gt = line(9, 5.0);
        assert_eq!(ate(&gt, &gt).unwrap(), 0.0);
        assert_eq!(rpe(&gt, &gt, 1).unwrap(), 0.0);
        let shifted: Vec<Pose4> = gt.iter().map(|p| Pose4::new(p.x + 3.0, p.y + 4.0, p.z, p.yaw)).collect();
        assert!((ate(&shifted, &gt).unwrap() - 5.0).abs() < 1e-12);
        assert!(rpe(&shifted, &gt, 1).unwrap() < 1e-12);
        // one 10 m step among eight: sqrt(25 / 8)
        let mut est = gt.clone();
        for p in est.iter_mut().skip(4) {
            p.x += 5.0;
        }
        assert!((rpe(&est, &gt, 1).unwrap() - (25.0f64 / 8.0).sqrt()).abs() < 1e-12);
        assert!((ate(&gt[..1], &shifted[..1]).unwrap() - 5.0).abs() < 1e-12);
        assert!(ate(&gt, &gt[..3]).is_err());
        assert!(rpe(&gt[..1], &gt[..1], 1).is_err());
    }

    #[test]
    fn navigation_boundary() {
        let o = Pose4::origin();
        assert_eq!(nav_outcome(&o, &o, 20.0).unwrap(), NavOutcome { ne: 0.0, success: true });
        let r = nav_outcome(&Pose4::new(3.0, 4.0, 0.0, 0.0), &o, 20.0).unwrap();
        assert_eq!((r.ne, r.success), (5.0, true));
        let r = nav_outcome(&Pose4::new(20.0, 0.0, 0.0, 0.0), &o, 20.0).unwrap();
        assert!(!r.success);
        assert!(nav_outcome(&o, &o, 0.0).is_err());
    }
}
