//! Candidate trajectories from motion primitives, waypoint perturbation,
//! quantization back to feasible actions, and ranking by imagined outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::primitive_actions;
use crate::error::{Error, Result};
use crate::eval::metrics::ImageDistance;
use crate::frame::FrameRGBD;
use crate::geometry::{action_between, compose_pose, Action4, Pose4, StepLimits};
use crate::rollout::{rollout_trajectory, Predictor, RolloutOptions};

/// Tolerance for waypoint/action consistency.
pub const TRAJECTORY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Pose4>,
    pub actions: Vec<Action4>,
}

impl Trajectory {
    pub fn from_actions(start: Pose4, actions: Vec<Action4>) -> Result<Self> {
        let mut waypoints = Vec::with_capacity(actions.len() + 1);
        waypoints.push(start);
        for a in &actions {
            let next = compose_pose(waypoints.last().expect("non-empty"), a)?;
            waypoints.push(next);
        }
        Ok(Self { waypoints, actions })
    }

    pub fn start(&self) -> Pose4 {
        self.waypoints[0]
    }

    pub fn endpoint(&self) -> Pose4 {
        *self.waypoints.last().expect("trajectory has a start")
    }

    /// Actions within limits and consistent with the waypoints.
    pub fn validate(&self, limits: &StepLimits) -> Result<()> {
        if self.waypoints.len() != self.actions.len() + 1 {
            return Err(Error::invalid("trajectory needs one more waypoint than actions"));
        }
        for (i, a) in self.actions.iter().enumerate() {
            if !limits.admits(a) {
                return Err(Error::invalid(format!("action {i} exceeds step limits")));
            }
            let next = compose_pose(&self.waypoints[i], a)?;
            if crate::dataset::pose_error(&next, &self.waypoints[i + 1]) > TRAJECTORY_TOLERANCE {
                return Err(Error::invalid(format!("action {i} inconsistent with waypoints")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of candidates `l`.
    pub candidates: usize,
    pub horizon: usize,
    pub sigma_pos: f64,
    pub sigma_yaw: f64,
    /// Multiplier on the primitive/goal alignment logits.
    pub goal_bias: f64,
    /// Softmax temperature for goal-biased sampling; 0 picks greedily.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            candidates: 5,
            horizon: 32,
            sigma_pos: 1.0,
            sigma_yaw: 5f64.to_radians(),
            goal_bias: 1.0,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.candidates >= 1
            && self.sigma_pos >= 0.0
            && self.sigma_yaw >= 0.0
            && self.temperature >= 0.0
            && self.goal_bias.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad planner config {self:?}")))
        }
    }
}

/// Cosine between the world-frame displacement of `a` taken at `pose` and
/// the hint direction. Pure rotations score 0.
pub fn alignment(pose: &Pose4, a: &Action4, hint: [f64; 3]) -> f64 {
    let (s, c) = pose.yaw.sin_cos();
    let d = [c * a.dx - s * a.dy, s * a.dx + c * a.dy, a.dz];
    let nd = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let nh = (hint[0] * hint[0] + hint[1] * hint[1] + hint[2] * hint[2]).sqrt();
    if nd == 0.0 || nh == 0.0 {
        return 0.0;
    }
    (d[0] * hint[0] + d[1] * hint[1] + d[2] * hint[2]) / (nd * nh)
}

fn pick_primitive(
    pose: &Pose4,
    primitives: &[Action4],
    hint: Option<[f64; 3]>,
    cfg: &PlannerConfig,
    rng: &mut impl Rng,
) -> usize {
    let Some(h) = hint else {
        return rng.random_range(0..primitives.len());
    };
    let scores: Vec<f64> = primitives.iter().map(|a| cfg.goal_bias * alignment(pose, a, h)).collect();
    if cfg.temperature == 0.0 {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        return best;
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

/// `cfg.candidates` primitive sequences of `cfg.horizon` actions. With a
/// goal hint (world-frame direction) primitives are drawn from a softmax
/// over their alignment with the hint.
pub fn sample_candidates_from(
    start: &Pose4,
    primitives: &[Action4],
    cfg: &PlannerConfig,
    goal_hint: Option<[f64; 3]>,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if primitives.is_empty() {
        return Err(Error::invalid("no primitives to sample from"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.candidates)
        .map(|_| {
            let mut pose = *start;
            let mut actions = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                let a = primitives[pick_primitive(&pose, primitives, goal_hint, cfg, &mut rng)];
                pose = compose_pose(&pose, &a)?;
                actions.push(a);
            }
            Trajectory::from_actions(*start, actions)
        })
        .collect()
}

/// Candidates over the eight standard primitives.
pub fn sample_candidates(start: &Pose4, cfg: &PlannerConfig, goal_hint: Option<[f64; 3]>) -> Result<Vec<Trajectory>> {
    sample_candidates_from(start, &primitive_actions(&StepLimits::default()), cfg, goal_hint)
}

/// Jitters every waypoint after the start, then walks the noisy waypoints
/// with clamped actions so the result stays feasible and consistent.
pub fn perturb_waypoints(t: &Trajectory, sigma_pos: f64, sigma_yaw: f64, seed: u64) -> Result<Trajectory> {
    if !(sigma_pos >= 0.0 && sigma_yaw >= 0.0) {
        return Err(Error::invalid("perturbation scales must be non-negative"));
    }
    if sigma_pos == 0.0 && sigma_yaw == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let np = Normal::new(0.0, sigma_pos).expect("finite sigma");
    let ny = Normal::new(0.0, sigma_yaw).expect("finite sigma");
    let limits = StepLimits::default();
    let mut current = t.start();
    let mut actions = Vec::with_capacity(t.actions.len());
    for w in &t.waypoints[1..] {
        let noisy = Pose4::new(
            w.x + np.sample(&mut rng),
            w.y + np.sample(&mut rng),
            w.z + np.sample(&mut rng),
            w.yaw + ny.sample(&mut rng),
        );
        let a = limits.clamp(action_between(&current, &noisy)?);
        current = compose_pose(&current, &a)?;
        actions.push(a);
    }
    Trajectory::from_actions(t.start(), actions)
}

/// Relative motion between consecutive waypoints, clamped to the step limits.
pub fn quantize_to_actions(waypoints: &[Pose4]) -> Result<Vec<Action4>> {
    let limits = StepLimits::default();
    waypoints
        .windows(2)
        .map(|w| Ok(limits.clamp(action_between(&w[0], &w[1])?)))
        .collect()
}

/// Index of the smallest score, lowest index on ties; `None` when no score
/// is finite.
pub fn select_index(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        if best.is_none_or(|b| *s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    pub scores: Vec<f64>,
    pub failed: Vec<bool>,
    /// Candidate indices by ascending score, ties by index.
    pub ordering: Vec<usize>,
    pub selected: usize,
    pub final_frames: Vec<Option<FrameRGBD>>,
}

/// Ranks already-imagined final frames against the goal image.
pub fn rank_frames(finals: Vec<Option<FrameRGBD>>, goal: &FrameRGBD, metric: &dyn ImageDistance) -> Result<RankingResult> {
    let n = finals.len();
    if n == 0 {
        return Err(Error::invalid("no candidates to rank"));
    }
    let mut scores = Vec::with_capacity(n);
    let mut failed = Vec::with_capacity(n);
    for f in &finals {
        let s = match f {
            Some(frame) => metric.distance(frame, goal).ok().filter(|s| !s.is_nan()),
            None => None,
        };
        failed.push(s.is_none());
        scores.push(s.unwrap_or(f64::INFINITY));
    }
    let selected = select_index(&scores).ok_or(Error::RankingFailed(n))?;
    let mut ordering: Vec<usize> = (0..n).collect();
    ordering.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(a.cmp(b)));
    Ok(RankingResult {
        scores,
        failed,
        ordering,
        selected,
        final_frames: finals,
    })
}

/// Imagines every candidate with `predictor` from the real `context` and
/// ranks the final frames against `goal`. A candidate whose rollout fails
/// scores infinity.
pub fn rank_candidates(
    predictor: &dyn Predictor,
    context: &[(FrameRGBD, Pose4)],
    candidates: &[Trajectory],
    goal: &FrameRGBD,
    metric: &dyn ImageDistance,
    opts: &RolloutOptions,
) -> Result<RankingResult> {
    let finals = candidates
        .iter()
        .map(|c| match rollout_trajectory(predictor, context, &c.actions, opts) {
            Ok(mut frames) => frames.pop().or_else(|| context.last().map(|(f, _)| f.clone())),
            Err(e) => {
                log::warn!("candidate rollout failed: {e}");
                None
            }
        })
        .collect();
    rank_frames(finals, goal, metric)
}
