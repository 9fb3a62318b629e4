//! Trajectory clips: generation by random walk, four-view action enrichment,
//! random partition into fixed-length segments, and the on-disk clip format.
//!
//! On-disk layout of one clip directory:
//!
//! ```text
//! manifest.json     version, intrinsics, poses, actions, meta
//! rgb/NNNN.png      8-bit RGB
//! depth/NNNN.raw    16-byte header + little-endian f32 raster
//! valid/NNNN.raw    16-byte header + one byte per pixel
//! ```
//!
//! Raster header: magic `ANWMDPT1`, `u32` width, `u32` height (little endian).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{level_to_unit, read_png_rgb, write_png_rgb, FrameRGBD};
use crate::geometry::{
    action_between, compose_pose, rotate_action_view, Action4, Intrinsics, Pose4, StepLimits,
};
use crate::scene::{render, Scene, SceneConfig};

pub const CLIP_FORMAT_VERSION: u32 = 1;
pub const RASTER_MAGIC: &[u8; 8] = b"ANWMDPT1";
/// Actions per segment.
pub const SEGMENT_LEN: usize = 48;
/// Pose/action consistency tolerance enforced on every clip.
pub const CLIP_TOLERANCE: f64 = 1e-6;
/// Resamples allowed per step before generation gives up.
pub const MAX_RESAMPLES: usize = 100;

/// The eight motion primitives at the per-step limits, in a fixed order:
/// forward, backward, left, right, up, down, rotate left, rotate right.
pub fn primitive_actions(limits: &StepLimits) -> Vec<Action4> {
    let h = limits.horizontal;
    let v = limits.vertical;
    let r = limits.yaw;
    vec![
        Action4::new(h, 0.0, 0.0, 0.0),
        Action4::new(-h, 0.0, 0.0, 0.0),
        Action4::new(0.0, h, 0.0, 0.0),
        Action4::new(0.0, -h, 0.0, 0.0),
        Action4::new(0.0, 0.0, v, 0.0),
        Action4::new(0.0, 0.0, -v, 0.0),
        Action4::new(0.0, 0.0, 0.0, r),
        Action4::new(0.0, 0.0, 0.0, -r),
    ]
}

pub const PRIMITIVE_NAMES: [&str; 8] = [
    "forward",
    "backward",
    "left",
    "right",
    "up",
    "down",
    "rotate_left",
    "rotate_right",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub start: Pose4,
    pub primitives: Vec<Action4>,
    /// Relative sampling weights, one per primitive. Empty means uniform.
    #[serde(default)]
    pub weights: Vec<f64>,
    pub seed: u64,
    pub length: usize,
    /// Minimum distance kept from boxes and the ground, meters.
    pub clearance: f64,
}

impl TrajectorySpec {
    pub fn new(start: Pose4, seed: u64, length: usize) -> Self {
        Self {
            start,
            primitives: primitive_actions(&StepLimits::default()),
            weights: Vec::new(),
            seed,
            length,
            clearance: 2.0,
        }
    }

    fn validate(&self, limits: &StepLimits) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::invalid("trajectory spec without primitives"));
        }
        if let Some(a) = self.primitives.iter().find(|a| !limits.admits(a)) {
            return Err(Error::invalid(format!("primitive {a:?} exceeds step limits")));
        }
        if !self.weights.is_empty() {
            if self.weights.len() != self.primitives.len() {
                return Err(Error::invalid("one weight per primitive required"));
            }
            if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || self.weights.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::invalid("primitive weights must be non-negative with positive sum"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub scene_seed: u64,
    /// Camera mounting offset in quarter turns (0 front, 1 left, 2 rear, 3 right).
    pub view_offset: u8,
    pub split: String,
    /// Scene configuration needed to re-render the scene, when known.
    #[serde(default)]
    pub scene_config: Option<SceneConfig>,
}

impl Default for ClipMeta {
    fn default() -> Self {
        Self {
            scene_seed: 0,
            view_offset: 0,
            split: "train".into(),
            scene_config: None,
        }
    }
}

/// Aligned frames, poses and actions: `frames[i]` is observed at `poses[i]`,
/// and `actions[i]` moves `poses[i]` to `poses[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub poses: Vec<Pose4>,
    pub actions: Vec<Action4>,
    pub frames: Vec<FrameRGBD>,
    pub intrinsics: Intrinsics,
    pub meta: ClipMeta,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Checks lengths, frame sizes and `compose_pose(poses[i], actions[i]) = poses[i+1]`.
    pub fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if self.poses.len() != n + 1 || self.frames.len() != n + 1 {
            return Err(Error::format(
                "clip",
                format!(
                    "{} poses and {} frames for {n} actions",
                    self.poses.len(),
                    self.frames.len()
                ),
            ));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.width != self.intrinsics.width || f.height != self.intrinsics.height {
                return Err(Error::format(format!("frames[{i}]"), "size differs from intrinsics"));
            }
        }
        for i in 0..n {
            let next = compose_pose(&self.poses[i], &self.actions[i])?;
            let err = pose_error(&next, &self.poses[i + 1]);
            if err > CLIP_TOLERANCE {
                return Err(Error::format(
                    format!("actions[{i}]"),
                    format!("does not connect poses {i} and {} (error {err:e})", i + 1),
                ));
            }
        }
        Ok(())
    }
}

/// Largest per-component deviation, yaw compared on the circle.
pub fn pose_error(a: &Pose4, b: &Pose4) -> f64 {
    (a.x - b.x)
        .abs()
        .max((a.y - b.y).abs())
        .max((a.z - b.z).abs())
        .max(crate::geometry::angle_diff(a.yaw, b.yaw).abs())
}

fn pose_is_free(scene: &Scene, from: &Pose4, to: &Pose4, clearance: f64) -> bool {
    let mid = [
        0.5 * (from.x + to.x),
        0.5 * (from.y + to.y),
        0.5 * (from.z + to.z),
    ];
    scene.is_free(to.position(), clearance) && scene.is_free(mid, clearance)
}

/// Random walk over the primitive set with collision rejection, rendering a
/// frame at every pose.
pub fn generate_trajectory(scene: &Scene, spec: &TrajectorySpec, k: &Intrinsics) -> Result<Clip> {
    let limits = StepLimits::default();
    spec.validate(&limits)?;
    k.validate()?;
    if !spec.start.is_finite() || !scene.is_free(spec.start.position(), spec.clearance) {
        return Err(Error::invalid(format!(
            "start pose {:?} is in collision or outside the scene",
            spec.start
        )));
    }
    let weights = if spec.weights.is_empty() {
        vec![1.0; spec.primitives.len()]
    } else {
        spec.weights.clone()
    };
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut poses = vec![spec.start];
    let mut actions = Vec::with_capacity(spec.length);
    for step in 0..spec.length {
        let current = *poses.last().expect("non-empty");
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let mut pick: f64 = rng.random_range(0.0..total);
            let mut idx = 0;
            while idx + 1 < weights.len() && pick >= weights[idx] {
                pick -= weights[idx];
                idx += 1;
            }
            let a = spec.primitives[idx];
            let next = compose_pose(&current, &a)?;
            if pose_is_free(scene, &current, &next, spec.clearance) {
                accepted = Some((a, next));
                break;
            }
        }
        let (a, next) = accepted.ok_or(Error::GenerationStuck {
            step,
            attempts: MAX_RESAMPLES,
        })?;
        actions.push(a);
        poses.push(next);
    }
    let frames = poses.iter().map(|p| render(scene, p, k)).collect();
    Ok(Clip {
        poses,
        actions,
        frames,
        intrinsics: *k,
        meta: ClipMeta {
            scene_seed: scene.seed,
            ..ClipMeta::default()
        },
    })
}

/// Re-expresses a clip under the four camera mountings (front, left, rear,
/// right). Output `q` has every yaw offset by `q * 90°`, actions mapped by
/// [`rotate_action_view`] and frames re-rendered at the offset poses.
pub fn enrich_views(clip: &Clip, scene: &Scene) -> Result<Vec<Clip>> {
    let mut out = Vec::with_capacity(4);
    for q in 0..4u8 {
        if q == 0 {
            out.push(clip.clone());
            continue;
        }
        let offset = q as f64 * std::f64::consts::FRAC_PI_2;
        let poses: Vec<Pose4> = clip
            .poses
            .iter()
            .map(|p| Pose4::new(p.x, p.y, p.z, p.yaw + offset))
            .collect();
        let actions = clip
            .actions
            .iter()
            .map(|a| rotate_action_view(a, q))
            .collect::<Result<Vec<_>>>()?;
        let frames = poses.iter().map(|p| render(scene, p, &clip.intrinsics)).collect();
        let mut meta = clip.meta.clone();
        meta.view_offset = (clip.meta.view_offset + q) % 4;
        out.push(Clip {
            poses,
            actions,
            frames,
            intrinsics: clip.intrinsics,
            meta,
        });
    }
    Ok(out)
}

/// Uniform random start offset in `0..=(total % segment_len)`.
pub fn random_partition_offset(total: usize, segment_len: usize, rng: &mut impl Rng) -> usize {
    if segment_len == 0 || total < segment_len {
        return 0;
    }
    rng.random_range(0..=total % segment_len)
}

/// Cuts non-overlapping contiguous segments of `segment_len` actions starting
/// at `offset`; the remainder is dropped.
pub fn partition_segments(clip: &Clip, segment_len: usize, offset: usize) -> Result<Vec<Clip>> {
    if segment_len == 0 {
        return Err(Error::invalid("segment length must be positive"));
    }
    let n = clip.actions.len();
    let mut out = Vec::new();
    let mut start = offset;
    while start + segment_len <= n {
        let end = start + segment_len;
        out.push(Clip {
            poses: clip.poses[start..=end].to_vec(),
            actions: clip.actions[start..end].to_vec(),
            frames: clip.frames[start..=end].to_vec(),
            intrinsics: clip.intrinsics,
            meta: clip.meta.clone(),
        });
        start = end;
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    intrinsics: Intrinsics,
    poses: Vec<[f64; 4]>,
    actions: Vec<[f64; 4]>,
    meta: ClipMeta,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn frame_name(i: usize) -> String {
    format!("{i:04}")
}

fn raster_header(width: usize, height: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(16);
    h.extend_from_slice(RASTER_MAGIC);
    h.extend_from_slice(&(width as u32).to_le_bytes());
    h.extend_from_slice(&(height as u32).to_le_bytes());
    h
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_clip(clip: &Clip, dir: &Path) -> Result<()> {
    clip.validate()?;
    for sub in ["rgb", "depth", "valid"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let manifest = Manifest {
        version: CLIP_FORMAT_VERSION,
        intrinsics: clip.intrinsics,
        poses: clip.poses.iter().map(|p| [p.x, p.y, p.z, p.yaw]).collect(),
        actions: clip.actions.iter().map(|a| a.to_array()).collect(),
        meta: clip.meta.clone(),
        extra: BTreeMap::new(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), text.as_bytes())?;
    for (i, f) in clip.frames.iter().enumerate() {
        let name = frame_name(i);
        write_png_rgb(&dir.join("rgb").join(format!("{name}.png")), f.width, f.height, &f.to_rgb8())?;
        let mut depth = raster_header(f.width, f.height);
        for d in &f.depth {
            depth.extend_from_slice(&d.to_le_bytes());
        }
        write_file(&dir.join("depth").join(format!("{name}.raw")), &depth)?;
        let mut valid = raster_header(f.width, f.height);
        valid.extend(f.valid.iter().map(|v| *v as u8));
        write_file(&dir.join("valid").join(format!("{name}.raw")), &valid)?;
    }
    Ok(())
}

fn read_raster(path: &Path, field: &str, width: usize, height: usize, bytes_per_px: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format(field, "file missing"),
        _ => Error::io(path, e),
    })?;
    if bytes.len() < 16 {
        return Err(Error::format(field, "truncated header"));
    }
    if &bytes[..8] != RASTER_MAGIC {
        return Err(Error::format(field, "bad magic"));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if (w, h) != (width, height) {
        return Err(Error::format(field, format!("raster is {w}x{h}, expected {width}x{height}")));
    }
    let expected = 16 + w * h * bytes_per_px;
    if bytes.len() != expected {
        return Err(Error::format(
            field,
            format!("{} bytes, expected {expected} (truncated or padded)", bytes.len()),
        ));
    }
    Ok(bytes[16..].to_vec())
}

/// Reads a clip, returning warnings for manifest keys this version does not
/// know about.
pub fn read_clip_with_warnings(dir: &Path) -> Result<(Clip, Vec<String>)> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::format("manifest.json", "file missing"),
        _ => Error::io(&manifest_path, e),
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format("manifest.json", e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::format("manifest.version", "missing or not an integer"))?;
    if version != CLIP_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            what: "clip manifest".into(),
            found: version as u32,
            expected: CLIP_FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(|f| format!("manifest.{f}"))
            .unwrap_or_else(|| "manifest.json".into());
        Error::format(field, msg)
    })?;
    let warnings: Vec<String> = manifest
        .extra
        .keys()
        .map(|k| format!("{}: ignoring unknown manifest key `{k}`", dir.display()))
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    let k = manifest.intrinsics;
    k.validate()
        .map_err(|e| Error::format("manifest.intrinsics", e.to_string()))?;
    let poses: Vec<Pose4> = manifest
        .poses
        .iter()
        .map(|p| Pose4 {
            x: p[0],
            y: p[1],
            z: p[2],
            yaw: p[3],
        })
        .collect();
    let actions: Vec<Action4> = manifest
        .actions
        .iter()
        .map(|a| Action4::new(a[0], a[1], a[2], a[3]))
        .collect();
    let mut frames = Vec::with_capacity(poses.len());
    for i in 0..poses.len() {
        let name = frame_name(i);
        let rgb_field = format!("rgb/{name}.png");
        let rgb_path = dir.join(&rgb_field);
        if !rgb_path.exists() {
            return Err(Error::format(rgb_field, "file missing"));
        }
        let (w, h, bytes) = read_png_rgb(&rgb_path)?;
        if (w, h) != (k.width, k.height) {
            return Err(Error::format(rgb_field, format!("image is {w}x{h}")));
        }
        let depth_field = format!("depth/{name}.raw");
        let raw = read_raster(&dir.join(&depth_field), &depth_field, w, h, 4)?;
        let depth = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let valid_field = format!("valid/{name}.raw");
        let raw = read_raster(&dir.join(&valid_field), &valid_field, w, h, 1)?;
        let valid = raw
            .iter()
            .map(|b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::format(&valid_field, format!("mask byte {other} is not 0/1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let frame = FrameRGBD {
            width: w,
            height: h,
            rgb: bytes.into_iter().map(level_to_unit).collect(),
            depth,
            valid,
        };
        frame
            .validate()
            .map_err(|e| Error::format(&depth_field, e.to_string()))?;
        frames.push(frame);
    }
    let clip = Clip {
        poses,
        actions,
        frames,
        intrinsics: k,
        meta: manifest.meta,
    };
    clip.validate()?;
    Ok((clip, warnings))
}

pub fn read_clip(dir: &Path) -> Result<Clip> {
    read_clip_with_warnings(dir).map(|(c, _)| c)
}

/// Clip directories (those holding a `manifest.json`) directly under `root`,
/// sorted by name.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_dataset(root: &Path) -> Result<Vec<Clip>> {
    list_clip_dirs(root)?.iter().map(|d| read_clip(d)).collect()
}

/// Settings for a whole generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene_seed: u64,
    pub scene: SceneConfig,
    pub clips: usize,
    pub segment_len: usize,
    pub image_size: usize,
    pub hfov_deg: f64,
    pub seed: u64,
    pub enrich: bool,
    /// Every `test_every`-th flight goes to the test split; 0 disables.
    pub test_every: usize,
    /// Sampling weights for the eight primitives; the default favors forward
    /// motion like recorded flights do.
    pub primitive_weights: Vec<f64>,
    pub altitude_min: f64,
    pub altitude_max: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene_seed: 0,
            scene: SceneConfig::default(),
            clips: 8,
            segment_len: SEGMENT_LEN,
            image_size: 64,
            hfov_deg: 90.0,
            seed: 0,
            enrich: true,
            test_every: 4,
            primitive_weights: vec![4.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.5, 1.5],
            altitude_min: 8.0,
            altitude_max: 40.0,
        }
    }
}

/// Samples a collision-free start pose.
pub fn sample_free_pose(scene: &Scene, rng: &mut impl Rng, alt: (f64, f64), clearance: f64) -> Result<Pose4> {
    let e = scene.extent * 0.9;
    for _ in 0..10_000 {
        let p = Pose4::new(
            rng.random_range(-e..e),
            rng.random_range(-e..e),
            rng.random_range(alt.0..alt.1.max(alt.0 + 1e-9)),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if scene.is_free(p.position(), clearance) {
            return Ok(p);
        }
    }
    Err(Error::invalid("could not find a collision-free start pose"))
}

/// Flies random trajectories, partitions them and enriches the segments
/// until `config.clips` clips exist.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Clip>> {
    if config.segment_len == 0 {
        return Err(Error::invalid("segment length must be positive"));
    }
    let scene = crate::scene::build_scene(config.scene_seed, &config.scene)?;
    let k = Intrinsics::with_fov(config.image_size, config.image_size, config.hfov_deg.to_radians())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clips = Vec::with_capacity(config.clips);
    let mut flight = 0usize;
    let mut failures = 0usize;
    while clips.len() < config.clips {
        let start = sample_free_pose(&scene, &mut rng, (config.altitude_min, config.altitude_max), 2.0)?;
        let extra = rng.random_range(0..config.segment_len);
        let mut spec = TrajectorySpec::new(start, rng.random(), config.segment_len + extra);
        spec.weights = config.primitive_weights.clone();
        let long = match generate_trajectory(&scene, &spec, &k) {
            Ok(c) => c,
            Err(Error::GenerationStuck { .. }) if failures < 100 => {
                failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let split = if config.test_every > 0 && flight % config.test_every == config.test_every - 1 {
            "test"
        } else {
            "train"
        };
        flight += 1;
        let offset = random_partition_offset(long.len(), config.segment_len, &mut rng);
        for mut seg in partition_segments(&long, config.segment_len, offset)? {
            seg.meta.split = split.into();
            seg.meta.scene_config = Some(config.scene.clone());
            let views = if config.enrich {
                enrich_views(&seg, &scene)?
            } else {
                vec![seg]
            };
            for v in views {
                if clips.len() < config.clips {
                    clips.push(v);
                }
            }
        }
    }
    Ok(clips)
}

/// Writes clips as `root/clip_00000`, `root/clip_00001`, ...
pub fn write_dataset(clips: &[Clip], root: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let dir = root.join(format!("clip_{i:05}"));
            write_clip(c, &dir)?;
            Ok(dir)
        })
        .collect()
}

/// Actions re-derived from consecutive poses.
pub fn derive_actions(poses: &[Pose4]) -> Result<Vec<Action4>> {
    poses.windows(2).map(|w| action_between(&w[0], &w[1])).collect()
}
