//! C ABI over `anwm-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_build`/
//! `*_load` functions and released by the matching `*_free`. Every fallible
//! function returns an [`AnwmStatus`]; the message of the last failure on the
//! calling thread is available from [`anwm_last_error`]. Panics never cross
//! the boundary and surface as [`AnwmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use anwm_core::eval::metrics;
use anwm_core::ffp::future_frame_projection;
use anwm_core::geometry::{action_between, compose_pose};
use anwm_core::model::{checkpoint, WorldModel};
use anwm_core::scene::{build_scene, render, Scene, SceneConfig};
use anwm_core::{Action4, Error, FrameRGBD, Intrinsics, Pose4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnwmStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Format = 3,
    Version = 4,
    Io = 5,
    GenerationStuck = 6,
    TrainingDiverged = 7,
    RankingFailed = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// World pose: position in meters, yaw in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnwmPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Body-frame motion step.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnwmAction {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnwmIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnwmImageMetrics {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Opaque procedural scene.
pub struct AnwmScene(Scene);

/// Opaque RGB-D frame.
pub struct AnwmFrame(FrameRGBD);

/// Opaque world model.
pub struct AnwmModel(WorldModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AnwmStatus {
    match e {
        Error::InvalidArgument(_) => AnwmStatus::InvalidArgument,
        Error::GenerationStuck { .. } => AnwmStatus::GenerationStuck,
        Error::Format { .. } => AnwmStatus::Format,
        Error::Version { .. } => AnwmStatus::Version,
        Error::TrainingDiverged { .. } => AnwmStatus::TrainingDiverged,
        Error::RankingFailed(_) => AnwmStatus::RankingFailed,
        Error::Io { .. } => AnwmStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AnwmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AnwmStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            AnwmStatus::NullPointer
        }
        Ok(Err(Fail::Small(need))) => {
            set_error(format!("buffer too small: need {need} elements"));
            AnwmStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            AnwmStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn pose(p: &AnwmPose) -> Pose4 {
    Pose4::new(p.x, p.y, p.z, p.yaw)
}

fn c_pose(p: &Pose4) -> AnwmPose {
    AnwmPose {
        x: p.x,
        y: p.y,
        z: p.z,
        yaw: p.yaw,
    }
}

fn action(a: &AnwmAction) -> Action4 {
    Action4::new(a.dx, a.dy, a.dz, a.dyaw)
}

fn intrinsics(k: &AnwmIntrinsics) -> Result<Intrinsics, Fail> {
    Ok(Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)?)
}

fn copy_into<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail::Small(src.len()));
    }
    if src.is_empty() {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Fail::Null("buffer"));
    }
    // SAFETY: the caller guarantees `buf` holds `len >= src.len()` elements.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len()) };
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// excluding the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn anwm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn anwm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Pose reached from `p` by the body-frame action `a`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_compose_pose(p: *const AnwmPose, a: *const AnwmAction, result: *mut AnwmPose) -> AnwmStatus {
    guard(|| {
        let r = compose_pose(&pose(get(p, "pose")?), &action(get(a, "action")?))?;
        *out(result, "result")? = c_pose(&r);
        Ok(())
    })
}

/// Action taking `from` to `to`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_action_between(
    from: *const AnwmPose,
    to: *const AnwmPose,
    result: *mut AnwmAction,
) -> AnwmStatus {
    guard(|| {
        let a = action_between(&pose(get(from, "from")?), &pose(get(to, "to")?))?;
        *out(result, "result")? = AnwmAction {
            dx: a.dx,
            dy: a.dy,
            dz: a.dz,
            dyaw: a.dyaw,
        };
        Ok(())
    })
}

/// Centered pinhole camera with horizontal field of view `hfov` (radians).
///
/// # Safety
/// `result` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_intrinsics_with_fov(
    width: usize,
    height: usize,
    hfov: f64,
    result: *mut AnwmIntrinsics,
) -> AnwmStatus {
    guard(|| {
        let k = Intrinsics::with_fov(width, height, hfov)?;
        *out(result, "result")? = AnwmIntrinsics {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
        };
        Ok(())
    })
}

/// Builds a scene; `config_toml` may be null for the default configuration.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `result` valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_scene_build(
    seed: u64,
    config_toml: *const c_char,
    result: *mut *mut AnwmScene,
) -> AnwmStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let cfg = if config_toml.is_null() {
            SceneConfig::default()
        } else {
            SceneConfig::from_toml_str(text(config_toml, "config")?)?
        };
        *slot = Box::into_raw(Box::new(AnwmScene(build_scene(seed, &cfg)?)));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or come from [`anwm_scene_build`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn anwm_scene_free(scene: *mut AnwmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Renders the view at `p`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_render(
    scene: *const AnwmScene,
    p: *const AnwmPose,
    k: *const AnwmIntrinsics,
    result: *mut *mut AnwmFrame,
) -> AnwmStatus {
    guard(|| {
        let s = get(scene, "scene")?;
        let k = intrinsics(get(k, "intrinsics")?)?;
        let f = render(&s.0, &pose(get(p, "pose")?), &k);
        *out(result, "result")? = Box::into_raw(Box::new(AnwmFrame(f)));
        Ok(())
    })
}

/// New frame from interleaved `rgb` (3·w·h values in [0, 1]). `depth`
/// (w·h meters) and `valid` (w·h bytes, nonzero = valid) are optional;
/// without them every pixel is invalid.
///
/// # Safety
/// Buffers must be null or hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_new(
    width: usize,
    height: usize,
    rgb: *const f32,
    depth: *const f32,
    valid: *const u8,
    result: *mut *mut AnwmFrame,
) -> AnwmStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::InvalidArgument("frame too large".into()))?;
        let mut f = FrameRGBD::from_rgb(width, height, slice(rgb, 3 * n, "rgb")?.to_vec())?;
        if !depth.is_null() {
            f.depth = slice(depth, n, "depth")?.to_vec();
            f.valid = match valid.is_null() {
                true => vec![true; n],
                false => slice(valid, n, "valid")?.iter().map(|v| *v != 0).collect(),
            };
        }
        f.validate()?;
        *slot = Box::into_raw(Box::new(AnwmFrame(f)));
        Ok(())
    })
}

/// # Safety
/// `frame` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_free(frame: *mut AnwmFrame) {
    if !frame.is_null() {
        drop(Box::from_raw(frame));
    }
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_size(frame: *const AnwmFrame, width: *mut usize, height: *mut usize) -> AnwmStatus {
    guard(|| {
        let f = &get(frame, "frame")?.0;
        *out(width, "width")? = f.width;
        *out(height, "height")? = f.height;
        Ok(())
    })
}

/// Copies the 3·w·h interleaved rgb values.
///
/// # Safety
/// `buf` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_rgb(frame: *const AnwmFrame, buf: *mut f32, len: usize) -> AnwmStatus {
    guard(|| copy_into(&get(frame, "frame")?.0.rgb, buf, len))
}

/// Copies the w·h depth values (meters; meaningless where invalid).
///
/// # Safety
/// `buf` must hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_depth(frame: *const AnwmFrame, buf: *mut f32, len: usize) -> AnwmStatus {
    guard(|| copy_into(&get(frame, "frame")?.0.depth, buf, len))
}

/// Copies the w·h validity flags as 0/1 bytes.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn anwm_frame_valid(frame: *const AnwmFrame, buf: *mut u8, len: usize) -> AnwmStatus {
    guard(|| {
        let v: Vec<u8> = get(frame, "frame")?.0.valid.iter().map(|b| *b as u8).collect();
        copy_into(&v, buf, len)
    })
}

/// Projects `count` context frames (oldest first) observed at `poses` into
/// `target` and fuses them.
///
/// # Safety
/// `frames` and `poses` must hold `count` elements.
#[no_mangle]
pub unsafe extern "C" fn anwm_future_frame_projection(
    frames: *const *const AnwmFrame,
    poses: *const AnwmPose,
    count: usize,
    target: *const AnwmPose,
    k: *const AnwmIntrinsics,
    result: *mut *mut AnwmFrame,
) -> AnwmStatus {
    guard(|| {
        let fs = slice(frames, count, "frames")?;
        let ps = slice(poses, count, "poses")?;
        let ctx = fs
            .iter()
            .zip(ps)
            .map(|(f, p)| Ok((&get(*f, "frame")?.0, pose(p))))
            .collect::<Result<Vec<_>, Fail>>()?;
        let k = intrinsics(get(k, "intrinsics")?)?;
        let prior = future_frame_projection(&ctx, &pose(get(target, "target")?), &k)?;
        *out(result, "result")? = Box::into_raw(Box::new(AnwmFrame(prior)));
        Ok(())
    })
}

/// MSE, PSNR and SSIM of `pred` against `gt`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_image_metrics(
    pred: *const AnwmFrame,
    gt: *const AnwmFrame,
    result: *mut AnwmImageMetrics,
) -> AnwmStatus {
    guard(|| {
        let m = metrics::image_metrics(&get(pred, "pred")?.0, &get(gt, "gt")?.0)?;
        *out(result, "result")? = AnwmImageMetrics {
            mse: m.mse,
            psnr: m.psnr,
            ssim: m.ssim,
        };
        Ok(())
    })
}

fn poses(p: *const AnwmPose, n: usize, what: &'static str) -> Result<Vec<Pose4>, Fail> {
    // SAFETY: forwarded from the caller's contract.
    Ok(unsafe { slice(p, n, what)? }.iter().map(pose).collect())
}

/// Absolute translation error over `count` pose pairs.
///
/// # Safety
/// `est` and `gt` must hold `count` poses.
#[no_mangle]
pub unsafe extern "C" fn anwm_ate(est: *const AnwmPose, gt: *const AnwmPose, count: usize, result: *mut f64) -> AnwmStatus {
    guard(|| {
        *out(result, "result")? = metrics::ate(&poses(est, count, "est")?, &poses(gt, count, "gt")?)?;
        Ok(())
    })
}

/// Relative translation error at step interval `delta`.
///
/// # Safety
/// `est` and `gt` must hold `count` poses.
#[no_mangle]
pub unsafe extern "C" fn anwm_rpe(
    est: *const AnwmPose,
    gt: *const AnwmPose,
    count: usize,
    delta: usize,
    result: *mut f64,
) -> AnwmStatus {
    guard(|| {
        *out(result, "result")? = metrics::rpe(&poses(est, count, "est")?, &poses(gt, count, "gt")?, delta)?;
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `result` valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_model_load(path: *const c_char, result: *mut *mut AnwmModel) -> AnwmStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let m = checkpoint::load(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(AnwmModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`anwm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn anwm_model_free(model: *mut AnwmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Context size the model was trained with.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_model_context(model: *const AnwmModel, result: *mut usize) -> AnwmStatus {
    guard(|| {
        *out(result, "result")? = get(model, "model")?.0.config.context;
        Ok(())
    })
}

/// Samples the next frame from `count` past frames (oldest first, exactly
/// the model's context size), the projected prior and the action.
///
/// # Safety
/// `past` must hold `count` frame handles; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn anwm_model_predict(
    model: *const AnwmModel,
    past: *const *const AnwmFrame,
    count: usize,
    prior: *const AnwmFrame,
    a: *const AnwmAction,
    seed: u64,
    result: *mut *mut AnwmFrame,
) -> AnwmStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        let frames = slice(past, count, "past")?
            .iter()
            .map(|f| Ok(&get(*f, "frame")?.0))
            .collect::<Result<Vec<_>, Fail>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = m.predict_frame(&frames, &get(prior, "prior")?.0, &action(get(a, "action")?), &mut rng)?;
        *out(result, "result")? = Box::into_raw(Box::new(AnwmFrame(f)));
        Ok(())
    })
}
