//! Future frame projection: forward-warp past RGB-D frames into a future
//! viewpoint and fuse them with a depth test.
//!
//! Splatting rounds every warped point to the nearest pixel. Inside one
//! source frame a per-pixel z-buffer keeps the smallest projected depth (the
//! first splat in raster order wins exact ties); across sources the smallest
//! projected depth wins and ties go to the later source in the list.

use crate::error::{Error, Result};
use crate::frame::FrameRGBD;
use crate::geometry::{relative_camera_transform, Intrinsics, Pose4, RigidTransform};

/// A warped view in the target camera. Depth is the target-frame z; holes
/// are `valid = false` with rgb 0 and depth 0.
pub type ProjectedFrame = FrameRGBD;

/// Largest rotation-orthogonality defect accepted for a warp.
pub const RIGIDITY_TOLERANCE: f64 = 1e-6;

/// One source pixel after warping into the target view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    /// Source pixel index (row-major).
    pub src: usize,
    /// Sub-pixel target coordinates before rounding.
    pub u: f64,
    pub v: f64,
    /// Target pixel index after nearest rounding.
    pub pixel: usize,
    /// Projected depth in the target camera, as stored.
    pub depth: f32,
}

fn check_inputs(src: &FrameRGBD, k: &Intrinsics) -> Result<()> {
    k.validate()?;
    if src.width != k.width || src.height != k.height {
        return Err(Error::invalid(format!(
            "frame is {}x{} but intrinsics are {}x{}",
            src.width, src.height, k.width, k.height
        )));
    }
    src.validate()
}

/// Warps every valid source pixel, in raster order. Points behind the target
/// camera or rounding outside the image are dropped.
pub fn project_splats(src: &FrameRGBD, t_rel: &RigidTransform, k: &Intrinsics) -> Result<Vec<Splat>> {
    check_inputs(src, k)?;
    let defect = t_rel.rigidity_error();
    if !(defect <= RIGIDITY_TOLERANCE) || t_rel.translation.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(format!("transform is not rigid (defect {defect:e})")));
    }
    let (w, h) = (k.width as f64, k.height as f64);
    let mut out = Vec::with_capacity(src.valid_count());
    for v in 0..src.height {
        for u in 0..src.width {
            let idx = v * src.width + u;
            if !src.valid[idx] {
                continue;
            }
            let p = t_rel.apply(k.back_project(u as f64, v as f64, src.depth[idx] as f64));
            if !(p[2] > 0.0) {
                continue;
            }
            let (tu, tv) = k.project(p);
            let (ru, rv) = (tu.round(), tv.round());
            if !(ru >= 0.0 && ru < w && rv >= 0.0 && rv < h) {
                continue;
            }
            let depth = p[2] as f32;
            if !(depth > 0.0) {
                continue;
            }
            out.push(Splat {
                src: idx,
                u: tu,
                v: tv,
                pixel: rv as usize * k.width + ru as usize,
                depth,
            });
        }
    }
    Ok(out)
}

/// Warps one RGB-D frame into the view related to it by `t_rel`
/// (source camera coordinates to target camera coordinates).
pub fn project_frame(src: &FrameRGBD, t_rel: &RigidTransform, k: &Intrinsics) -> Result<ProjectedFrame> {
    let splats = project_splats(src, t_rel, k)?;
    let mut out = ProjectedFrame::new(k.width, k.height);
    for s in splats {
        if !out.valid[s.pixel] || s.depth < out.depth[s.pixel] {
            out.valid[s.pixel] = true;
            out.depth[s.pixel] = s.depth;
            out.set_rgb(s.pixel, src.rgb_at(s.src));
        }
    }
    Ok(out)
}

/// Per-pixel minimum projected depth over the sources; ties go to the most
/// recent (last) source.
pub fn fuse_projections(frames: &[ProjectedFrame]) -> Result<ProjectedFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("cannot fuse an empty list of projections"))?;
    if frames.iter().any(|f| !f.same_size(first)) {
        return Err(Error::invalid("projections differ in size"));
    }
    let mut out = first.clone();
    for f in &frames[1..] {
        for i in 0..f.pixel_count() {
            if f.valid[i] && (!out.valid[i] || f.depth[i] <= out.depth[i]) {
                out.valid[i] = true;
                out.depth[i] = f.depth[i];
                out.set_rgb(i, f.rgb_at(i));
            }
        }
    }
    Ok(out)
}

/// Projects every context frame (oldest first) into `target` and fuses them.
pub fn future_frame_projection(
    context: &[(&FrameRGBD, Pose4)],
    target: &Pose4,
    k: &Intrinsics,
) -> Result<ProjectedFrame> {
    if context.is_empty() {
        return Err(Error::invalid("future frame projection needs at least one context frame"));
    }
    let projected = context
        .iter()
        .map(|(frame, pose)| {
            let t = relative_camera_transform(pose, target)?;
            project_frame(frame, &t, k)
        })
        .collect::<Result<Vec<_>>>()?;
    fuse_projections(&projected)
}

/// Single-frame variant: only the most recent context frame is warped.
pub fn latest_frame_projection(
    context: &[(&FrameRGBD, Pose4)],
    target: &Pose4,
    k: &Intrinsics,
) -> Result<ProjectedFrame> {
    let last = context
        .last()
        .ok_or_else(|| Error::invalid("future frame projection needs at least one context frame"))?;
    future_frame_projection(std::slice::from_ref(last), target, k)
}

/// Ratio of invalid pixels.
pub fn hole_fraction(frame: &ProjectedFrame) -> f64 {
    1.0 - frame.valid_count() as f64 / frame.pixel_count().max(1) as f64
}
