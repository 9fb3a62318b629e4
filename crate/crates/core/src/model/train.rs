//! Training windows, AdamW and the noise-prediction training loop.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DenoiseSample, LatentGrid, ModelConfig, Params, WorldModel};
use crate::autodiff::Matrix;
use crate::dataset::Clip;
use crate::error::{Error, Result};
use crate::ffp::future_frame_projection;
use crate::frame::FrameRGBD;
use crate::geometry::Action4;

/// Past-frame indices conditioning the prediction of frame `next`: the `m`
/// frames before it, with the first frame repeated when fewer exist.
pub fn context_indices(next: usize, m: usize) -> Vec<usize> {
    (0..m)
        .map(|i| (next as isize - (m - i) as isize).max(0) as usize)
        .collect()
}

/// Everything needed to predict one frame of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub past: Vec<LatentGrid>,
    pub prior: LatentGrid,
    pub action: Action4,
    pub target: LatentGrid,
}

/// Projected prior for predicting frame `next` of `clip` from its distinct
/// real context frames.
pub fn clip_prior(clip: &Clip, next: usize, m: usize) -> Result<FrameRGBD> {
    if next == 0 || next >= clip.frames.len() {
        return Err(Error::invalid(format!("no context for frame {next}")));
    }
    let start = next.saturating_sub(m);
    let context: Vec<(&FrameRGBD, _)> = (start..next).map(|i| (&clip.frames[i], clip.poses[i])).collect();
    future_frame_projection(&context, &clip.poses[next], &clip.intrinsics)
}

pub fn window_at(clip: &Clip, next: usize, config: &ModelConfig) -> Result<TrainingWindow> {
    let codec = config.codec();
    let past = context_indices(next, config.context)
        .into_iter()
        .map(|i| codec.encode(&clip.frames[i]))
        .collect::<Result<Vec<_>>>()?;
    let prior = codec.encode(&clip_prior(clip, next, config.context)?)?;
    Ok(TrainingWindow {
        past,
        prior,
        action: clip.actions[next - 1],
        target: codec.encode(&clip.frames[next])?,
    })
}

/// One window per predictable frame of every clip.
pub fn build_windows(clips: &[Clip], config: &ModelConfig) -> Result<Vec<TrainingWindow>> {
    let mut out = Vec::new();
    for clip in clips {
        if clip.intrinsics.width != config.image_width || clip.intrinsics.height != config.image_height {
            return Err(Error::invalid(format!(
                "clip frames are {}x{}, model expects {}x{}",
                clip.intrinsics.width, clip.intrinsics.height, config.image_width, config.image_height
            )));
        }
        for next in 1..clip.frames.len() {
            out.push(window_at(clip, next, config)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub lr_schedule: LrSchedule,
    pub log_every: usize,
}

/// Learning rate over the run of `steps` optimizer steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to 0 at the last step.
    Cosine,
}

impl LrSchedule {
    pub fn factor(&self, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine if steps <= 1 => 1.0,
            LrSchedule::Cosine => {
                let p = (step.min(steps - 1)) as f64 / (steps - 1) as f64;
                0.5 * (1.0 + (std::f64::consts::PI * p).cos())
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr: 8e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            lr_schedule: LrSchedule::Constant,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr >= 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.grad_clip >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad training config {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Params, config: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params.tensors.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect();
        Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Matrix]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m.data[i] / bc1) / ((v.data[i] / bc2).sqrt() + self.eps);
                p.data[i] -= self.lr * (update + self.weight_decay * p.data[i]);
            }
        }
    }
}

pub struct Trainer {
    pub model: WorldModel,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: WorldModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(&model.params, &config);
        Ok(Self {
            model,
            config,
            optimizer,
            step: 0,
        })
    }

    fn noise_like(g: &LatentGrid, rng: &mut impl Rng) -> LatentGrid {
        LatentGrid {
            data: (0..g.data.len()).map(|_| StandardNormal.sample(rng)).collect(),
            ..g.clone()
        }
    }

    /// Draws a step and noise per window, takes one optimizer step and
    /// returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &[&TrainingWindow], rng: &mut impl Rng) -> Result<f64> {
        let steps = self.model.schedule.steps();
        let samples: Vec<DenoiseSample> = batch
            .iter()
            .map(|w| DenoiseSample {
                past: w.past.clone(),
                prior: w.prior.clone(),
                action: w.action,
                target: w.target.clone(),
                tau: rng.random_range(0..steps),
                noise: Self::noise_like(&w.target, rng),
            })
            .collect();
        let (loss, mut grads) = self.model.loss_and_grads(&samples)?;
        let norm = grads.iter().map(|g| g.data.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.step,
                loss,
                dump: self.dump(&samples, norm),
            });
        }
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let s = self.config.grad_clip / norm;
            grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
        }
        self.optimizer.lr = self.config.lr * self.config.lr_schedule.factor(self.step, self.config.steps);
        self.optimizer.step(&mut self.model.params, &grads);
        self.step += 1;
        if !self.model.params.is_finite() {
            return Err(Error::TrainingDiverged {
                step: self.step,
                loss,
                dump: self.dump(&samples, norm),
            });
        }
        Ok(loss)
    }

    fn dump(&self, samples: &[DenoiseSample], grad_norm: f64) -> String {
        let taus: Vec<usize> = samples.iter().map(|s| s.tau).collect();
        let mut lines = vec![
            format!("lr = {}", self.optimizer.lr),
            format!("gradient norm = {grad_norm}"),
            format!("batch steps = {taus:?}"),
        ];
        for (name, t) in self.model.params.names.iter().zip(&self.model.params.tensors) {
            lines.push(format!("{name}: norm {}", t.norm()));
        }
        lines.join("\n")
    }

    /// Runs `config.steps` steps over random batches (the whole set when it
    /// fits in one batch); returns the loss of every step.
    pub fn fit(&mut self, windows: &[TrainingWindow], rng: &mut impl Rng) -> Result<Vec<f64>> {
        if windows.is_empty() {
            return Err(Error::invalid("no training windows"));
        }
        let mut losses = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let batch: Vec<&TrainingWindow> = if self.config.batch_size >= windows.len() {
                windows.iter().collect()
            } else {
                sample(rng, windows.len(), self.config.batch_size)
                    .into_iter()
                    .map(|i| &windows[i])
                    .collect()
            };
            let loss = self.train_step(&batch, rng)?;
            if self.config.log_every > 0 && self.step.is_multiple_of(self.config.log_every) {
                log::info!("step {} loss {loss:.5}", self.step);
            }
            losses.push(loss);
        }
        Ok(losses)
    }
}
