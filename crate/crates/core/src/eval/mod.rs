//! Metrics plus the generation, navigation and ablation drivers and their
//! JSON report.

pub mod metrics;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{list_clip_dirs, read_clip, Clip};
use crate::error::{Error, Result};
use crate::ffp::{future_frame_projection, hole_fraction};
use crate::frame::FrameRGBD;
use crate::geometry::Pose4;
use crate::model::train::{build_windows, TrainConfig, Trainer};
use crate::model::{ModelConfig, WorldModel};
use crate::planner::{perturb_waypoints, rank_candidates, sample_candidates, PlannerConfig};
use crate::rollout::{rollout_trajectory, DepthPolicy, DiffusionPredictor, Predictor, RolloutOptions};
use crate::scene::{build_scene, Scene};

pub use metrics::{ate, image_metrics, nav_outcome, rpe, rpe_yaw, ImageMetrics, NavOutcome};

pub const REPORT_VERSION: u32 = 1;
pub const CONTEXT_FRAMES: usize = 16;
pub const PREDICT_FRAMES: usize = 32;
pub const HORIZONS: [usize; 4] = [4, 8, 16, 32];
pub const FFP_GRID: [usize; 5] = [1, 2, 4, 8, 16];

/// A clip with the directory name it was read from.
#[derive(Debug, Clone)]
pub struct NamedClip {
    pub name: String,
    pub clip: Clip,
}

/// Reads every clip under `root`; `split` keeps only clips of that split,
/// falling back to all clips when none match.
pub fn load_named_clips(root: &Path, split: Option<&str>) -> Result<Vec<NamedClip>> {
    let mut all = Vec::new();
    for dir in list_clip_dirs(root)? {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        all.push(NamedClip {
            name,
            clip: read_clip(&dir)?,
        });
    }
    if let Some(s) = split {
        let picked: Vec<NamedClip> = all.iter().filter(|c| c.clip.meta.split == s).cloned().collect();
        if !picked.is_empty() {
            return Ok(picked);
        }
        log::warn!("no clips in split `{s}`, using all {}", all.len());
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub horizon: usize,
    /// Clips that contributed.
    pub clips: usize,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub baseline_mse: Option<f64>,
    pub baseline_psnr: Option<f64>,
    pub baseline_ssim: Option<f64>,
    /// Learned metrics are not computed here; kept so external scores can be merged.
    pub lpips: Option<f64>,
    pub dreamsim: Option<f64>,
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavigationSummary {
    pub episodes: usize,
    pub threshold: f64,
    pub ate: f64,
    pub rpe: f64,
    pub rpe_yaw: f64,
    pub ne: f64,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: String,
    pub value: String,
    pub samples: usize,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub hole_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub clip: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub predictor: String,
    pub seed: u64,
    pub clips: Vec<String>,
    pub context_frames: usize,
    pub predict_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub version: u32,
    pub meta: RunMeta,
    pub horizons: Vec<HorizonRow>,
    pub navigation: Option<NavigationSummary>,
    pub ablation: Vec<AblationRow>,
    pub failures: Vec<ClipFailure>,
}

impl MetricReport {
    pub fn new(meta: RunMeta) -> Self {
        Self {
            version: REPORT_VERSION,
            meta,
            horizons: Vec::new(),
            navigation: None,
            ablation: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Range and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("report field out of range: {what}")));
        let ssim_ok = |s: f64| s.is_finite() && (-1.0..=1.0).contains(&s);
        let mse_ok = |m: f64| m.is_finite() && m >= 0.0;
        for r in &self.horizons {
            for m in [r.mse, r.baseline_mse].into_iter().flatten() {
                if !mse_ok(m) {
                    return bad("mse");
                }
            }
            for s in [r.ssim, r.baseline_ssim].into_iter().flatten() {
                if !ssim_ok(s) {
                    return bad("ssim");
                }
            }
            for p in [r.psnr, r.baseline_psnr].into_iter().flatten() {
                if !p.is_finite() {
                    return bad("psnr");
                }
            }
        }
        if let Some(n) = &self.navigation {
            if !(0.0..=1.0).contains(&n.sr) {
                return bad("sr");
            }
            if ![n.ate, n.rpe, n.rpe_yaw, n.ne].iter().all(|v| v.is_finite() && *v >= 0.0) {
                return bad("navigation");
            }
        }
        for r in &self.ablation {
            if !mse_ok(r.mse) || !ssim_ok(r.ssim) || !r.psnr.is_finite() {
                return bad("ablation");
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::format("report", e.to_string()))?;
        if r.version != REPORT_VERSION {
            return Err(Error::Version {
                what: "report".into(),
                found: r.version,
                expected: REPORT_VERSION,
            });
        }
        Ok(r)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Settings shared by the generation and navigation drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub context_frames: usize,
    pub predict_frames: usize,
    pub horizons: Vec<usize>,
    pub depth: DepthPolicy,
    /// Queue frames used for the prior; 0 means all.
    pub ffp_frames: usize,
    pub success_threshold: f64,
    pub metric: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            context_frames: CONTEXT_FRAMES,
            predict_frames: PREDICT_FRAMES,
            horizons: HORIZONS.to_vec(),
            depth: DepthPolicy::Geom,
            ffp_frames: 0,
            success_threshold: metrics::SUCCESS_THRESHOLD,
            metric: "ssim".into(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_frames == 0 || self.predict_frames == 0 {
            return Err(Error::invalid("context and prediction lengths must be positive"));
        }
        if self.horizons.iter().any(|h| *h == 0 || *h > self.predict_frames) {
            return Err(Error::invalid(format!(
                "horizons must lie in 1..={}",
                self.predict_frames
            )));
        }
        if !(self.success_threshold > 0.0) {
            return Err(Error::invalid("success threshold must be positive"));
        }
        metrics::distance_by_name(&self.metric)?;
        Ok(())
    }

    fn needed_frames(&self) -> usize {
        self.context_frames + self.predict_frames
    }
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Scene the clip was rendered from, when its metadata allows a rebuild.
pub fn clip_scene(clip: &Clip) -> Option<Scene> {
    let cfg = clip.meta.scene_config.as_ref()?;
    build_scene(clip.meta.scene_seed, cfg).ok()
}

fn context_of(clip: &Clip, n: usize) -> Vec<(FrameRGBD, Pose4)> {
    clip.frames[..n].iter().cloned().zip(clip.poses[..n].iter().copied()).collect()
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-clip image metrics at each horizon for the predictor and the
/// copy-last baseline.
fn generation_clip(
    predictor: &dyn Predictor,
    clip: &Clip,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Vec<(ImageMetrics, ImageMetrics)>> {
    if clip.frames.len() < cfg.needed_frames() {
        return Err(Error::invalid(format!(
            "clip has {} frames, need {}",
            clip.frames.len(),
            cfg.needed_frames()
        )));
    }
    let c = cfg.context_frames;
    let scene = clip_scene(clip);
    let depth = if scene.is_some() { cfg.depth } else { DepthPolicy::Carry };
    let opts = RolloutOptions {
        depth,
        scene: scene.as_ref(),
        intrinsics: clip.intrinsics,
        ffp_frames: cfg.ffp_frames,
        seed,
    };
    let actions = &clip.actions[c - 1..c - 1 + cfg.predict_frames];
    let predicted = rollout_trajectory(predictor, &context_of(clip, c), actions, &opts)?;
    let last = &clip.frames[c - 1];
    cfg.horizons
        .iter()
        .map(|h| {
            let gt = &clip.frames[c - 1 + h];
            Ok((image_metrics(&predicted[h - 1], gt)?, image_metrics(last, gt)?))
        })
        .collect()
}

/// Seeds each clip with `context_frames` real frames, generates
/// `predict_frames` more and scores the horizons against ground truth.
/// Clips that fail are listed under `failures` instead.
pub fn run_generation_eval(predictor: &dyn Predictor, clips: &[NamedClip], cfg: &EvalConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let mut report = MetricReport::new(RunMeta {
        predictor: predictor.name().into(),
        seed: cfg.seed,
        clips: clips.iter().map(|c| c.name.clone()).collect(),
        context_frames: cfg.context_frames,
        predict_frames: cfg.predict_frames,
    });
    let mut per_clip = Vec::new();
    for (i, nc) in clips.iter().enumerate() {
        match generation_clip(predictor, &nc.clip, cfg, clip_seed(cfg.seed, i)) {
            Ok(rows) => per_clip.push(rows),
            Err(e) => {
                log::warn!("generation eval failed on {}: {e}", nc.name);
                report.failures.push(ClipFailure {
                    clip: nc.name.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    for (j, h) in cfg.horizons.iter().enumerate() {
        let col = |f: &dyn Fn(&(ImageMetrics, ImageMetrics)) -> f64| -> Option<f64> {
            mean(&per_clip.iter().map(|rows| f(&rows[j])).collect::<Vec<_>>())
        };
        report.horizons.push(HorizonRow {
            horizon: *h,
            clips: per_clip.len(),
            mse: col(&|r| r.0.mse),
            psnr: col(&|r| r.0.psnr),
            ssim: col(&|r| r.0.ssim),
            baseline_mse: col(&|r| r.1.mse),
            baseline_psnr: col(&|r| r.1.psnr),
            baseline_ssim: col(&|r| r.1.ssim),
            lpips: None,
            dreamsim: None,
            fid: None,
        });
    }
    Ok(report)
}

/// One navigation episode: plans from the last context pose toward the
/// clip's final frame and compares the chosen path with the flown one.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ate: f64,
    pub rpe: f64,
    pub rpe_yaw: f64,
    pub outcome: NavOutcome,
    pub selected: usize,
}

pub fn navigation_episode(
    predictor: &dyn Predictor,
    clip: &Clip,
    planner: &PlannerConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Episode> {
    if clip.frames.len() < cfg.needed_frames() {
        return Err(Error::invalid("clip too short for a navigation episode"));
    }
    let c = cfg.context_frames;
    let end = c - 1 + cfg.predict_frames;
    let start = clip.poses[c - 1];
    let goal = clip.poses[end];
    let hint = [goal.x - start.x, goal.y - start.y, goal.z - start.z];
    let pcfg = PlannerConfig {
        horizon: cfg.predict_frames,
        seed,
        ..planner.clone()
    };
    let candidates = sample_candidates(&start, &pcfg, Some(hint))?
        .iter()
        .enumerate()
        .map(|(i, t)| perturb_waypoints(t, pcfg.sigma_pos, pcfg.sigma_yaw, seed.wrapping_add(i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let scene = clip_scene(clip);
    let depth = if scene.is_some() { cfg.depth } else { DepthPolicy::Carry };
    let opts = RolloutOptions {
        depth,
        scene: scene.as_ref(),
        intrinsics: clip.intrinsics,
        ffp_frames: cfg.ffp_frames,
        seed,
    };
    let metric = metrics::distance_by_name(&cfg.metric)?;
    let ranking = rank_candidates(
        predictor,
        &context_of(clip, c),
        &candidates,
        &clip.frames[end],
        metric.as_ref(),
        &opts,
    )?;
    let chosen = &candidates[ranking.selected];
    let gt = &clip.poses[c - 1..=end];
    Ok(Episode {
        ate: ate(&chosen.waypoints, gt)?,
        rpe: rpe(&chosen.waypoints, gt, 1)?,
        rpe_yaw: rpe_yaw(&chosen.waypoints, gt, 1)?,
        outcome: nav_outcome(&chosen.endpoint(), &goal, cfg.success_threshold)?,
        selected: ranking.selected,
    })
}

/// Runs an episode per clip and fills `report.navigation` with the means.
pub fn run_navigation_eval(
    predictor: &dyn Predictor,
    clips: &[NamedClip],
    planner: &PlannerConfig,
    cfg: &EvalConfig,
    report: &mut MetricReport,
) -> Result<()> {
    cfg.validate()?;
    planner.validate()?;
    let mut eps = Vec::new();
    for (i, nc) in clips.iter().enumerate() {
        match navigation_episode(predictor, &nc.clip, planner, cfg, clip_seed(cfg.seed ^ planner.seed, i)) {
            Ok(e) => eps.push(e),
            Err(e) => report.failures.push(ClipFailure {
                clip: nc.name.clone(),
                error: format!("navigation: {e}"),
            }),
        }
    }
    if eps.is_empty() {
        return Ok(());
    }
    let avg = |f: &dyn Fn(&Episode) -> f64| eps.iter().map(f).sum::<f64>() / eps.len() as f64;
    report.navigation = Some(NavigationSummary {
        episodes: eps.len(),
        threshold: cfg.success_threshold,
        ate: avg(&|e| e.ate),
        rpe: avg(&|e| e.rpe),
        rpe_yaw: avg(&|e| e.rpe_yaw),
        ne: avg(&|e| e.outcome.ne),
        sr: avg(&|e| e.outcome.success as u8 as f64),
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    /// Past frames fused into the projected prior; needs no model.
    FfpContext,
    /// Context size `m` of a freshly trained model.
    GenContext,
    /// Uniform versus independent modulation of the two memories.
    Modulation,
}

impl AblationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FfpContext => "ffp-context",
            Self::GenContext => "gen-context",
            Self::Modulation => "modulation",
        }
    }

    pub fn default_grid(&self) -> Vec<String> {
        match self {
            Self::FfpContext => FFP_GRID.iter().map(|n| n.to_string()).collect(),
            Self::GenContext => ["1", "2", "4", "8", "16"].map(String::from).to_vec(),
            Self::Modulation => ["uniform", "independent"].map(String::from).to_vec(),
        }
    }
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffp-context" => Ok(Self::FfpContext),
            "gen-context" => Ok(Self::GenContext),
            "modulation" => Ok(Self::Modulation),
            other => Err(Error::invalid(format!(
                "unknown ablation `{other}` (ffp-context|gen-context|modulation)"
            ))),
        }
    }
}

/// Copy of `frame` with invalid (sky) pixels set to black.
pub fn scene_only(frame: &FrameRGBD) -> FrameRGBD {
    let mut out = frame.clone();
    for i in 0..out.pixel_count() {
        if !out.valid[i] {
            out.set_rgb(i, [0.0; 3]);
        }
    }
    out
}

/// Fuses the `count` frames before each target index and scores the prior
/// against the real frame there. Targets with fewer than `count` earlier
/// frames are skipped, so every grid point sees the same targets only when
/// all targets are at least the largest count.
///
/// With `mask_sky` the real frame's sky pixels are set to the hole color
/// before scoring: sky has no depth, so no amount of context can project it.
pub fn ffp_context_row(clips: &[NamedClip], count: usize, targets: &[usize], mask_sky: bool) -> Result<AblationRow> {
    if count == 0 {
        return Err(Error::invalid("ffp context count must be positive"));
    }
    let (mut m, mut s, mut h) = (Vec::new(), Vec::new(), Vec::new());
    for nc in clips {
        let clip = &nc.clip;
        for &t in targets {
            if t < count || t >= clip.frames.len() {
                continue;
            }
            let ctx: Vec<(&FrameRGBD, Pose4)> = (t - count..t).map(|i| (&clip.frames[i], clip.poses[i])).collect();
            let prior = future_frame_projection(&ctx, &clip.poses[t], &clip.intrinsics)?;
            let im = if mask_sky {
                image_metrics(&prior, &scene_only(&clip.frames[t]))?
            } else {
                image_metrics(&prior, &clip.frames[t])?
            };
            m.push(im.mse);
            s.push(im.ssim);
            h.push(hole_fraction(&prior));
        }
    }
    let mse = mean(&m).ok_or_else(|| Error::invalid(format!("no usable targets for count {count}")))?;
    Ok(AblationRow {
        kind: AblationKind::FfpContext.as_str().into(),
        value: count.to_string(),
        samples: m.len(),
        mse,
        psnr: metrics::psnr_from_mse(mse),
        ssim: mean(&s).unwrap_or(0.0),
        hole_fraction: mean(&h),
    })
}

/// Everything a sweep needs besides the grid.
#[derive(Debug, Clone)]
pub struct AblationSetup<'a> {
    pub train: &'a [NamedClip],
    pub test: &'a [NamedClip],
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
    /// Target frame indices for the ffp-context sweep.
    pub ffp_targets: Vec<usize>,
    pub seed: u64,
}

fn train_and_score(setup: &AblationSetup, model_cfg: ModelConfig, kind: AblationKind, value: &str) -> Result<AblationRow> {
    let clips: Vec<Clip> = setup.train.iter().map(|c| c.clip.clone()).collect();
    let windows = build_windows(&clips, &model_cfg)?;
    let model = WorldModel::new(model_cfg, setup.seed)?;
    let mut trainer = Trainer::new(model, setup.training.clone())?;
    trainer.fit(&windows, &mut ChaCha8Rng::seed_from_u64(setup.seed))?;
    let predictor = DiffusionPredictor { model: &trainer.model };
    let report = run_generation_eval(&predictor, setup.test, &setup.eval)?;
    let rows: Vec<&HorizonRow> = report.horizons.iter().filter(|r| r.clips > 0).collect();
    if rows.is_empty() {
        return Err(Error::invalid(format!("{} = {value}: every test clip failed", kind.as_str())));
    }
    let avg = |f: &dyn Fn(&HorizonRow) -> Option<f64>| rows.iter().filter_map(|r| f(r)).sum::<f64>() / rows.len() as f64;
    Ok(AblationRow {
        kind: kind.as_str().into(),
        value: value.into(),
        samples: rows[0].clips,
        mse: avg(&|r| r.mse),
        psnr: avg(&|r| r.psnr),
        ssim: avg(&|r| r.ssim),
        hole_fraction: None,
    })
}

/// One report row per grid point, all other settings fixed.
pub fn run_ablation(kind: AblationKind, grid: &[String], setup: &AblationSetup) -> Result<MetricReport> {
    if grid.is_empty() {
        return Err(Error::invalid("ablation grid is empty"));
    }
    let mut report = MetricReport::new(RunMeta {
        predictor: match kind {
            AblationKind::FfpContext => "ffp".into(),
            _ => "diffusion".into(),
        },
        seed: setup.seed,
        clips: setup.test.iter().map(|c| c.name.clone()).collect(),
        context_frames: setup.eval.context_frames,
        predict_frames: setup.eval.predict_frames,
    });
    for value in grid {
        let row = match kind {
            AblationKind::FfpContext => {
                let n: usize = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("ffp-context grid value `{value}` is not a count")))?;
                ffp_context_row(setup.test, n, &setup.ffp_targets, true)?
            }
            AblationKind::GenContext => {
                let m: usize = value
                    .parse()
                    .map_err(|_| Error::invalid(format!("gen-context grid value `{value}` is not a count")))?;
                let cfg = ModelConfig {
                    context: m,
                    ..setup.model.clone()
                };
                cfg.validate()?;
                train_and_score(setup, cfg, kind, value)?
            }
            AblationKind::Modulation => {
                let independent = match value.as_str() {
                    "uniform" => false,
                    "independent" => true,
                    other => {
                        return Err(Error::invalid(format!(
                            "modulation grid value `{other}` (uniform|independent)"
                        )))
                    }
                };
                let cfg = ModelConfig {
                    independent_modulation: independent,
                    ..setup.model.clone()
                };
                train_and_score(setup, cfg, kind, value)?
            }
        };
        report.ablation.push(row);
    }
    Ok(report)
}
