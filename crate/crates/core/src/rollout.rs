//! Autoregressive generation: keep the last `m` frames, build the projected
//! prior toward the next pose, predict, append, repeat.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffp::{future_frame_projection, project_frame};
use crate::frame::FrameRGBD;
use crate::geometry::{compose_pose, relative_camera_transform, Action4, Intrinsics, Pose4};
use crate::model::WorldModel;
use crate::scene::{render, Scene};

/// Anything that can produce the next frame from context frames, the
/// projected prior and the action.
pub trait Predictor {
    fn name(&self) -> &str;

    /// Number of past frames the predictor is conditioned on.
    fn context_size(&self) -> usize;

    /// `past` is oldest first and holds exactly `context_size()` frames.
    fn predict(
        &self,
        past: &[&FrameRGBD],
        prior: &FrameRGBD,
        action: &Action4,
        target: &Pose4,
        rng: &mut ChaCha8Rng,
    ) -> Result<FrameRGBD>;
}

pub struct DiffusionPredictor<'a> {
    pub model: &'a WorldModel,
}

impl Predictor for DiffusionPredictor<'_> {
    fn name(&self) -> &str {
        "diffusion"
    }

    fn context_size(&self) -> usize {
        self.model.config.context
    }

    fn predict(
        &self,
        past: &[&FrameRGBD],
        prior: &FrameRGBD,
        action: &Action4,
        _target: &Pose4,
        rng: &mut ChaCha8Rng,
    ) -> Result<FrameRGBD> {
        self.model.predict_frame(past, prior, action, rng)
    }
}

/// Renders the true view at the target pose; the perfect world model.
pub struct RendererOracle<'a> {
    pub scene: &'a Scene,
    pub intrinsics: Intrinsics,
    pub context: usize,
}

impl Predictor for RendererOracle<'_> {
    fn name(&self) -> &str {
        "renderer"
    }

    fn context_size(&self) -> usize {
        self.context
    }

    fn predict(
        &self,
        _past: &[&FrameRGBD],
        _prior: &FrameRGBD,
        _action: &Action4,
        target: &Pose4,
        _rng: &mut ChaCha8Rng,
    ) -> Result<FrameRGBD> {
        Ok(render(self.scene, target, &self.intrinsics))
    }
}

/// Repeats the most recent frame.
pub struct CopyLast {
    pub context: usize,
}

impl Predictor for CopyLast {
    fn name(&self) -> &str {
        "copy-last"
    }

    fn context_size(&self) -> usize {
        self.context
    }

    fn predict(
        &self,
        past: &[&FrameRGBD],
        _prior: &FrameRGBD,
        _action: &Action4,
        _target: &Pose4,
        _rng: &mut ChaCha8Rng,
    ) -> Result<FrameRGBD> {
        let last = past.last().ok_or_else(|| Error::invalid("copy-last needs a frame"))?;
        let mut f = FrameRGBD::new(last.width, last.height);
        f.rgb = last.rgb.clone();
        Ok(f)
    }
}

/// Where depth for generated frames comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthPolicy {
    /// Render depth from scene geometry at the generated pose.
    Geom,
    /// Reproject the last real observation's depth; holes stay invalid.
    Carry,
}

impl std::str::FromStr for DepthPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geom" | "geom-depth" => Ok(Self::Geom),
            "carry" | "carry-depth" => Ok(Self::Carry),
            other => Err(Error::invalid(format!("unknown depth policy `{other}` (geom|carry)"))),
        }
    }
}

pub struct RolloutOptions<'a> {
    pub depth: DepthPolicy,
    /// Required by [`DepthPolicy::Geom`].
    pub scene: Option<&'a Scene>,
    pub intrinsics: Intrinsics,
    /// Queue frames used for the projected prior; 0 means all of them.
    pub ffp_frames: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RolloutState {
    pub queue: VecDeque<(FrameRGBD, Pose4)>,
    pub pose: Pose4,
    pub step: usize,
    pub capacity: usize,
    last_real: (FrameRGBD, Pose4),
    rng: ChaCha8Rng,
    /// Frames handed to the predictor at each step.
    pub conditioning_log: Vec<usize>,
}

impl RolloutState {
    /// Seeds the queue with the last `capacity` of the real observations.
    pub fn new(context: &[(FrameRGBD, Pose4)], capacity: usize, seed: u64) -> Result<Self> {
        let last = context
            .last()
            .ok_or_else(|| Error::invalid("rollout needs at least one real observation"))?
            .clone();
        if capacity == 0 {
            return Err(Error::invalid("rollout queue capacity must be positive"));
        }
        let start = context.len().saturating_sub(capacity);
        Ok(Self {
            queue: context[start..].iter().cloned().collect(),
            pose: last.1,
            step: 0,
            capacity,
            last_real: last,
            rng: ChaCha8Rng::seed_from_u64(seed),
            conditioning_log: Vec::new(),
        })
    }
}

/// Queue frames, oldest first, left-padded with the oldest to `n`.
fn padded(queue: &VecDeque<(FrameRGBD, Pose4)>, n: usize) -> Vec<&FrameRGBD> {
    let frames: Vec<&FrameRGBD> = queue.iter().map(|(f, _)| f).collect();
    let missing = n.saturating_sub(frames.len());
    let mut out = vec![frames[0]; missing];
    out.extend(frames.iter().skip(frames.len().saturating_sub(n)));
    out
}

/// Advances one action; returns the generated frame (with the depth chosen
/// by the policy).
pub fn step(
    state: &mut RolloutState,
    predictor: &dyn Predictor,
    action: &Action4,
    opts: &RolloutOptions,
) -> Result<FrameRGBD> {
    let target = compose_pose(&state.pose, action)?;
    let k = &opts.intrinsics;
    let n = if opts.ffp_frames == 0 {
        state.queue.len()
    } else {
        opts.ffp_frames.min(state.queue.len())
    };
    let ctx: Vec<(&FrameRGBD, Pose4)> = state
        .queue
        .iter()
        .skip(state.queue.len() - n)
        .map(|(f, p)| (f, *p))
        .collect();
    let prior = future_frame_projection(&ctx, &target, k)?;
    let m = predictor.context_size().min(state.capacity);
    let past = padded(&state.queue, m);
    state.conditioning_log.push(past.len());
    let mut frame = predictor.predict(&past, &prior, action, &target, &mut state.rng)?;
    if frame.width != k.width || frame.height != k.height {
        return Err(Error::invalid("predictor returned a frame of the wrong size"));
    }
    match opts.depth {
        DepthPolicy::Geom => {
            let scene = opts
                .scene
                .ok_or_else(|| Error::invalid("geom depth policy needs the scene"))?;
            let truth = render(scene, &target, k);
            frame.depth = truth.depth;
            frame.valid = truth.valid;
        }
        DepthPolicy::Carry => {
            let (real, pose) = &state.last_real;
            let t = relative_camera_transform(pose, &target)?;
            let carried = project_frame(real, &t, k)?;
            frame.depth = carried.depth;
            frame.valid = carried.valid;
        }
    }
    state.queue.push_back((frame.clone(), target));
    while state.queue.len() > state.capacity {
        state.queue.pop_front();
    }
    state.pose = target;
    state.step += 1;
    Ok(frame)
}

/// One generated frame per action.
pub fn rollout_trajectory(
    predictor: &dyn Predictor,
    context: &[(FrameRGBD, Pose4)],
    actions: &[Action4],
    opts: &RolloutOptions,
) -> Result<Vec<FrameRGBD>> {
    let mut state = RolloutState::new(context, predictor.context_size(), opts.seed)?;
    actions.iter().map(|a| step(&mut state, predictor, a, opts)).collect()
}
