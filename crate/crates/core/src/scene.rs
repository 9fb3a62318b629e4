//! Procedural urban scenes and a deterministic RGB-D ray caster.
//!
//! A scene is a bounded textured ground plane at `z = 0` plus axis-aligned
//! boxes standing on it. Every surface carries a closed-form texture so the
//! renderer needs no assets and two renders of the same view are identical.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{quantize_unit, FrameRGBD};
use crate::geometry::{world_from_camera, Intrinsics, Pose4};

/// Scene generation parameters. Loaded from TOML; every key is optional and
/// falls back to [`SceneConfig::default`].
///
/// | key | meaning |
/// |-----|---------|
/// | `extent` | half-width in meters of the square area holding boxes |
/// | `ground_margin` | ground plane reaches `extent + ground_margin` |
/// | `box_count_min`, `box_count_max` | inclusive range for the number of boxes |
/// | `footprint_min`, `footprint_max` | box side length range, meters |
/// | `height_min`, `height_max` | box height range, meters |
/// | `period_min`, `period_max` | texture wavelength range on box faces, meters |
/// | `ground_period` | texture wavelength on the ground, meters |
/// | `fog_distance` | aerial haze e-folding distance in meters, 0 disables |
/// | `sky` | RGB of escaping rays, each in [0, 1] |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub extent: f64,
    pub ground_margin: f64,
    pub box_count_min: usize,
    pub box_count_max: usize,
    pub footprint_min: f64,
    pub footprint_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub period_min: f64,
    pub period_max: f64,
    pub ground_period: f64,
    pub fog_distance: f64,
    pub sky: [f32; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            extent: 120.0,
            ground_margin: 80.0,
            box_count_min: 24,
            box_count_max: 36,
            footprint_min: 10.0,
            footprint_max: 28.0,
            height_min: 8.0,
            height_max: 60.0,
            period_min: 16.0,
            period_max: 40.0,
            ground_period: 40.0,
            fog_distance: 180.0,
            sky: [0.62, 0.76, 0.92],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("extent", self.extent),
            ("footprint_min", self.footprint_min),
            ("height_min", self.height_min),
            ("period_min", self.period_min),
            ("ground_period", self.ground_period),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("scene config: {name} must be > 0, got {v}")));
            }
        }
        if !(self.ground_margin.is_finite() && self.ground_margin >= 0.0) {
            return Err(Error::invalid("scene config: ground_margin must be >= 0"));
        }
        if !(self.fog_distance.is_finite() && self.fog_distance >= 0.0) {
            return Err(Error::invalid("scene config: fog_distance must be >= 0"));
        }
        let ranges = [
            ("footprint", self.footprint_min, self.footprint_max),
            ("height", self.height_min, self.height_max),
            ("period", self.period_min, self.period_max),
        ];
        for (name, lo, hi) in ranges {
            if !(hi.is_finite() && hi >= lo) {
                return Err(Error::invalid(format!("scene config: {name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.box_count_max < self.box_count_min {
            return Err(Error::invalid("scene config: box_count_max < box_count_min"));
        }
        if self.box_count_max > 0 && self.footprint_max >= 2.0 * self.extent {
            return Err(Error::invalid("scene config: boxes larger than the scene extent"));
        }
        if self.sky.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("scene config: sky color outside [0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SceneConfig =
            toml::from_str(text).map_err(|e| Error::format("scene config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene config serializes")
    }
}

/// Closed-form surface color as a function of the two in-face world
/// coordinates `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    /// `base + (accent - base) * w`, `w = 0.5 + 0.5 sin(2πu/P + φu) sin(2πv/P + φv)`:
    /// a smooth checkerboard.
    Waves {
        base: [f64; 3],
        accent: [f64; 3],
        period: f64,
        phase: [f64; 2],
    },
    /// Smooth bands along `u` only.
    Stripes {
        base: [f64; 3],
        accent: [f64; 3],
        period: f64,
        phase: f64,
    },
    /// Affine color field `base + du * u + dv * v`, clamped to [0, 1].
    Ramp {
        base: [f64; 3],
        du: [f64; 3],
        dv: [f64; 3],
    },
}

impl Texture {
    pub fn color(&self, u: f64, v: f64) -> [f64; 3] {
        use std::f64::consts::TAU;
        match self {
            Texture::Waves {
                base,
                accent,
                period,
                phase,
            } => {
                let w = 0.5 + 0.5 * (TAU * u / period + phase[0]).sin() * (TAU * v / period + phase[1]).sin();
                mix(base, accent, w)
            }
            Texture::Stripes {
                base,
                accent,
                period,
                phase,
            } => {
                let w = 0.5 + 0.5 * (TAU * u / period + phase).sin();
                mix(base, accent, w)
            }
            Texture::Ramp { base, du, dv } => {
                let mut c = [0.0; 3];
                for i in 0..3 {
                    c[i] = (base[i] + du[i] * u + dv[i] * v).clamp(0.0, 1.0);
                }
                c
            }
        }
    }
}

fn mix(a: &[f64; 3], b: &[f64; 3], w: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * w,
        a[1] + (b[1] - a[1]) * w,
        a[2] + (b[2] - a[2]) * w,
    ]
}

/// Face order: -x, +x, -y, +y, -z, +z.
const FACE_SHADE: [f64; 6] = [0.78, 0.9, 0.7, 0.84, 0.6, 1.0];

/// Axis-aligned cuboid standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// One texture per face, ordered -x, +x, -y, +y, -z, +z.
    pub faces: Vec<Texture>,
}

impl SceneBox {
    /// Builds a box with the same texture on every face.
    pub fn uniform(min: [f64; 3], max: [f64; 3], texture: Texture) -> Self {
        Self {
            min,
            max,
            faces: vec![texture; 6],
        }
    }

    pub fn contains(&self, p: [f64; 3], margin: f64) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - margin && p[i] <= self.max[i] + margin)
    }

    /// Entry distance and face index of a ray hitting the box from outside.
    fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut face = 0;
        for axis in 0..3 {
            if dir[axis] == 0.0 {
                if origin[axis] < self.min[axis] || origin[axis] > self.max[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[axis];
            let mut t0 = (self.min[axis] - origin[axis]) * inv;
            let mut t1 = (self.max[axis] - origin[axis]) * inv;
            // entering through the min face when travelling in +axis
            let mut entry_face = 2 * axis;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
                entry_face = 2 * axis + 1;
            }
            if t0 > t_near {
                t_near = t0;
                face = entry_face;
            }
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        (t_near > 1e-9).then_some((t_near, face))
    }

    fn face_color(&self, face: usize, p: [f64; 3]) -> [f64; 3] {
        let (u, v) = match face / 2 {
            0 => (p[1], p[2]),
            1 => (p[0], p[2]),
            _ => (p[0], p[1]),
        };
        let c = self.faces[face].color(u, v);
        let s = FACE_SHADE[face];
        [c[0] * s, c[1] * s, c[2] * s]
    }

    fn distance_to_surface(&self, p: [f64; 3]) -> f64 {
        let mut outside = 0.0f64;
        let mut inside = f64::INFINITY;
        for i in 0..3 {
            let below = self.min[i] - p[i];
            let above = p[i] - self.max[i];
            let d = below.max(above);
            if d > 0.0 {
                outside += d * d;
            }
            inside = inside.min(-d);
        }
        if outside > 0.0 {
            outside.sqrt()
        } else {
            inside.max(0.0)
        }
    }
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals planar depth when the direction has unit camera z.
    pub t: f64,
    pub point: [f64; 3],
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    /// Ground plane spans `[-ground_half, ground_half]` in x and y.
    pub ground_half: f64,
    pub ground: Texture,
    pub boxes: Vec<SceneBox>,
    pub sky: [f32; 3],
    pub fog_distance: f64,
    /// Half-width of the region agents may fly in.
    pub extent: f64,
}

pub fn build_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(config.box_count_min..=config.box_count_max);
    let mut boxes = Vec::with_capacity(count);
    for _ in 0..count {
        let sx = sample(&mut rng, config.footprint_min, config.footprint_max);
        let sy = sample(&mut rng, config.footprint_min, config.footprint_max);
        let h = sample(&mut rng, config.height_min, config.height_max);
        let cx = sample(&mut rng, -config.extent + sx / 2.0, config.extent - sx / 2.0);
        let cy = sample(&mut rng, -config.extent + sy / 2.0, config.extent - sy / 2.0);
        let faces = (0..6)
            .map(|_| random_texture(&mut rng, config.period_min, config.period_max))
            .collect();
        boxes.push(SceneBox {
            min: [cx - sx / 2.0, cy - sy / 2.0, 0.0],
            max: [cx + sx / 2.0, cy + sy / 2.0, h],
            faces,
        });
    }
    let ground = Texture::Waves {
        base: [0.32, 0.42, 0.26],
        accent: [0.58, 0.55, 0.44],
        period: config.ground_period,
        phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
    };
    Ok(Scene {
        seed,
        ground_half: config.extent + config.ground_margin,
        ground,
        boxes,
        sky: config.sky,
        fog_distance: config.fog_distance,
        extent: config.extent,
    })
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_texture(rng: &mut ChaCha8Rng, period_min: f64, period_max: f64) -> Texture {
    let mut color = |lo: f64, hi: f64| {
        [
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
        ]
    };
    let base = color(0.15, 0.85);
    let accent = color(0.15, 0.85);
    let period = sample(rng, period_min, period_max);
    if rng.random_bool(0.6) {
        Texture::Waves {
            base,
            accent,
            period,
            phase: [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)],
        }
    } else {
        Texture::Stripes {
            base,
            accent,
            period,
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

impl Scene {
    /// A scene from explicit parts, for hand-built test geometry.
    pub fn from_parts(ground_half: f64, ground: Texture, boxes: Vec<SceneBox>, extent: f64) -> Self {
        Self {
            seed: 0,
            ground_half,
            ground,
            boxes,
            sky: SceneConfig::default().sky,
            fog_distance: 0.0,
            extent,
        }
    }

    /// Nearest surface hit along `origin + t * dir`, `t > 0`.
    pub fn intersect(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<Hit> {
        let mut best: Option<(f64, Option<(usize, usize)>)> = None;
        if dir[2] < 0.0 && origin[2] > 0.0 {
            let t = -origin[2] / dir[2];
            let gx = origin[0] + t * dir[0];
            let gy = origin[1] + t * dir[1];
            if gx.abs() <= self.ground_half && gy.abs() <= self.ground_half {
                best = Some((t, None));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, face)) = b.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, Some((i, face))));
                }
            }
        }
        let (t, what) = best?;
        let point = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        let color = match what {
            None => self.ground.color(point[0], point[1]),
            Some((i, face)) => self.boxes[i].face_color(face, point),
        };
        Some(Hit { t, point, color })
    }

    /// Distance from `p` to the closest scene surface.
    pub fn distance_to_surface(&self, p: [f64; 3]) -> f64 {
        let dx = (p[0].abs() - self.ground_half).max(0.0);
        let dy = (p[1].abs() - self.ground_half).max(0.0);
        let mut best = (dx * dx + dy * dy + p[2] * p[2]).sqrt();
        for b in &self.boxes {
            best = best.min(b.distance_to_surface(p));
        }
        best
    }

    /// True when `p` is above the ground, inside the flight area and at
    /// least `margin` away from every box.
    pub fn is_free(&self, p: [f64; 3], margin: f64) -> bool {
        p[2] > margin
            && p[0].abs() <= self.extent
            && p[1].abs() <= self.extent
            && !self.boxes.iter().any(|b| b.contains(p, margin))
    }

    fn shade(&self, hit: &Hit, ray_length: f64) -> [f32; 3] {
        let haze = if self.fog_distance > 0.0 {
            (-ray_length / self.fog_distance).exp()
        } else {
            1.0
        };
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let v = hit.color[c] * haze + self.sky[c] as f64 * (1.0 - haze);
            out[c] = quantize_unit(v);
        }
        out
    }

    /// Camera ray through sub-pixel `(u, v)`, scaled to unit camera-frame z.
    pub fn camera_ray(pose: &Pose4, k: &Intrinsics, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
        let to_world = world_from_camera(pose);
        let d_cam = [(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0];
        (pose.position(), to_world.rotate(d_cam))
    }

    /// Ray-cast the view through sub-pixel `(u, v)`; returns planar depth
    /// and shaded color when the ray hits something.
    pub fn sample_view(&self, pose: &Pose4, k: &Intrinsics, u: f64, v: f64) -> Option<(f64, [f32; 3])> {
        let (origin, dir) = Self::camera_ray(pose, k, u, v);
        let hit = self.intersect(origin, dir)?;
        let len = hit.t * (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        Some((hit.t, self.shade(&hit, len)))
    }
}

/// Renders the RGB-D view at `pose`. Depth is the camera-frame z of the hit
/// point; rays that escape are marked invalid and painted with the sky color.
pub fn render(scene: &Scene, pose: &Pose4, k: &Intrinsics) -> FrameRGBD {
    let mut frame = FrameRGBD::new(k.width, k.height);
    let sky = scene.sky.map(|c| quantize_unit(c as f64));
    for v in 0..k.height {
        for u in 0..k.width {
            let idx = v * k.width + u;
            match scene.sample_view(pose, k, u as f64, v as f64) {
                Some((depth, rgb)) => {
                    frame.set_rgb(idx, rgb);
                    frame.depth[idx] = depth as f32;
                    frame.valid[idx] = true;
                }
                None => {
                    frame.set_rgb(idx, sky);
                }
            }
        }
    }
    frame
}
