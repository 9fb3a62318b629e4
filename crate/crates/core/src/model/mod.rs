//! Action-conditioned latent diffusion transformer.
//!
//! Each latent cell is one token. The noisy future latent attends to itself,
//! then to the past-frame tokens, then to the projected-prior tokens; both
//! cross-attentions share one weight set but get their own AdaLN shift and
//! scale. Conditioning is the action embedding plus the diffusion-step
//! embedding, refined by a small residual MLP.

pub mod checkpoint;
pub mod codec;
pub mod embed;
pub mod schedule;
pub mod train;

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::frame::FrameRGBD;
use crate::geometry::Action4;

pub use codec::{Codec, LatentGrid};
pub use schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_width: usize,
    pub image_height: usize,
    pub codec_factor: usize,
    /// Token width `d_e`.
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Past frames per prediction (`m`).
    pub context: usize,
    /// Action embedding width `d`, a multiple of 8.
    pub cond_dim: usize,
    pub mlp_ratio: usize,
    pub diffusion_steps: usize,
    pub sampling_steps: usize,
    /// 0 gives the deterministic sampler.
    pub eta: f64,
    /// Separate AdaLN shift/scale for the two cross-attention memories; when
    /// false both use the first memory's pair.
    pub independent_modulation: bool,
    /// Residual MLP on the conditioning vector before the AdaLN heads.
    pub cond_mlp: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_width: 64,
            image_height: 64,
            codec_factor: 4,
            d_model: 128,
            heads: 4,
            blocks: 4,
            context: 4,
            cond_dim: 128,
            mlp_ratio: 4,
            diffusion_steps: 250,
            sampling_steps: 25,
            eta: 0.0,
            independent_modulation: true,
            cond_mlp: true,
        }
    }
}

impl ModelConfig {
    /// Two blocks, 16-wide tokens, 8×8 frames.
    pub fn micro() -> Self {
        Self {
            image_width: 8,
            image_height: 8,
            codec_factor: 2,
            d_model: 16,
            heads: 2,
            blocks: 2,
            context: 4,
            cond_dim: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let codec = Codec::new(self.codec_factor)?;
        codec.latent_shape(self.image_width, self.image_height)?;
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.blocks == 0 || self.context == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("blocks, context and mlp_ratio must be positive"));
        }
        if self.cond_dim == 0 || !self.cond_dim.is_multiple_of(8) {
            return Err(Error::invalid("cond_dim must be a positive multiple of 8"));
        }
        if self.diffusion_steps == 0 || self.sampling_steps == 0 || self.sampling_steps > self.diffusion_steps {
            return Err(Error::invalid("need 0 < sampling_steps <= diffusion_steps"));
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("eta must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn codec(&self) -> Codec {
        Codec {
            factor: self.codec_factor,
        }
    }

    /// `(channels, height, width)` of every latent.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        let f = self.codec_factor;
        (3 * f * f, self.image_height / f, self.image_width / f)
    }

    pub fn tokens(&self) -> usize {
        let (_, h, w) = self.latent_shape();
        h * w
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::format("model config", e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl Params {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct BlockLayout {
    mhsa: Attention,
    mhca: Attention,
    mlp_in: Linear,
    mlp_out: Linear,
    adaln: Linear,
}

#[derive(Debug, Clone)]
struct Layout {
    in_noisy: Linear,
    in_context: Linear,
    pos: usize,
    frame_emb: Vec<usize>,
    prior_emb: usize,
    cond: Option<(Linear, Linear)>,
    blocks: Vec<BlockLayout>,
    head: Linear,
}

enum Init {
    Zero,
    /// Normal with standard deviation `1/sqrt(fan_in)`.
    Fan,
    Normal(f64),
}

struct Builder<'a, R: Rng> {
    params: Params,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn tensor(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        let std = match init {
            Init::Zero => 0.0,
            Init::Fan => 1.0 / (rows as f64).sqrt(),
            Init::Normal(s) => s,
        };
        let data = if std == 0.0 {
            vec![0.0; rows * cols]
        } else {
            let n = Normal::new(0.0, std).expect("positive std");
            (0..rows * cols).map(|_| n.sample(self.rng)).collect()
        };
        self.params.names.push(name);
        self.params.tensors.push(Matrix::from_vec(rows, cols, data));
        self.params.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Linear {
        Linear {
            w: self.tensor(format!("{name}.weight"), fan_in, fan_out, init),
            b: self.tensor(format!("{name}.bias"), 1, fan_out, Init::Zero),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d, Init::Fan),
            k: self.linear(&format!("{name}.k"), d, d, Init::Fan),
            v: self.linear(&format!("{name}.v"), d, d, Init::Fan),
            o: self.linear(&format!("{name}.o"), d, d, Init::Fan),
        }
    }
}

fn build_layout<R: Rng>(config: &ModelConfig, rng: &mut R) -> (Layout, Params) {
    let d = config.d_model;
    let (c, _, _) = config.latent_shape();
    let l = config.tokens();
    let mut b = Builder {
        params: Params {
            names: Vec::new(),
            tensors: Vec::new(),
        },
        rng,
    };
    let in_noisy = b.linear("embed.noisy", c, d, Init::Fan);
    let in_context = b.linear("embed.context", c, d, Init::Fan);
    let pos = b.tensor("embed.position".into(), l, d, Init::Normal(0.02));
    let frame_emb = (0..config.context)
        .map(|i| b.tensor(format!("embed.frame{i}"), 1, d, Init::Normal(0.02)))
        .collect();
    let prior_emb = b.tensor("embed.prior".into(), 1, d, Init::Normal(0.02));
    let cond = config.cond_mlp.then(|| {
        (
            b.linear("cond.fc1", config.cond_dim, config.cond_dim, Init::Fan),
            b.linear("cond.fc2", config.cond_dim, config.cond_dim, Init::Zero),
        )
    });
    let blocks = (0..config.blocks)
        .map(|i| BlockLayout {
            mhsa: b.attention(&format!("block{i}.mhsa"), d),
            mhca: b.attention(&format!("block{i}.mhca"), d),
            mlp_in: b.linear(&format!("block{i}.mlp.fc1"), d, config.mlp_ratio * d, Init::Fan),
            mlp_out: b.linear(&format!("block{i}.mlp.fc2"), config.mlp_ratio * d, d, Init::Fan),
            adaln: b.linear(&format!("block{i}.adaln"), config.cond_dim, 14 * d, Init::Zero),
        })
        .collect();
    let head = b.linear("head", d, c, Init::Zero);
    (
        Layout {
            in_noisy,
            in_context,
            pos,
            frame_emb,
            prior_emb,
            cond,
            blocks,
            head,
        },
        b.params,
    )
}

/// Per-block AdaLN output: `alpha` 4×d_e gates, `beta` 5×d_e scales and
/// `gamma` 5×d_e shifts (row 5 feeds the output head).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationCoeffs {
    pub alpha: Matrix,
    pub beta: Matrix,
    pub gamma: Matrix,
}

impl ModulationCoeffs {
    pub fn zeros(d: usize) -> Self {
        Self {
            alpha: Matrix::zeros(4, d),
            beta: Matrix::zeros(5, d),
            gamma: Matrix::zeros(5, d),
        }
    }
}

struct CoeffVars {
    alpha: Vec<Var>,
    beta: Vec<Var>,
    gamma: Vec<Var>,
}

/// One denoising example: inputs, the clean target latent, the step and the
/// noise that was added.
#[derive(Debug, Clone)]
pub struct DenoiseSample {
    pub past: Vec<LatentGrid>,
    pub prior: LatentGrid,
    pub action: Action4,
    pub target: LatentGrid,
    pub tau: usize,
    pub noise: LatentGrid,
}

#[derive(Debug, Clone)]
pub struct WorldModel {
    pub config: ModelConfig,
    pub params: Params,
    pub schedule: NoiseSchedule,
    layout: Layout,
}

impl WorldModel {
    /// Seeded initialization: fan-in scaled normal weights, zero biases, zero
    /// AdaLN heads and a zero output head.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = build_layout(&config, &mut rng);
        let schedule = NoiseSchedule::cosine(config.diffusion_steps)?;
        Ok(Self {
            config,
            params,
            schedule,
            layout,
        })
    }

    /// Replaces all parameters; names and shapes must match this config.
    pub fn with_params(config: ModelConfig, params: Params) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        if params.names != m.params.names {
            return Err(Error::format("parameters", "tensor names do not match the model config"));
        }
        for (i, (a, b)) in params.tensors.iter().zip(&m.params.tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::format(
                    format!("parameters.{}", params.names[i]),
                    format!("shape {:?}, expected {:?}", a.shape(), b.shape()),
                ));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn codec(&self) -> Codec {
        self.config.codec()
    }

    fn p(&self, tape: &mut Tape, index: usize) -> Var {
        tape.param(index, &self.params.tensors[index])
    }

    fn linear(&self, tape: &mut Tape, lin: Linear, x: Var) -> Var {
        let w = self.p(tape, lin.w);
        let b = self.p(tape, lin.b);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn attention(&self, tape: &mut Tape, att: Attention, query: Var, memory: Var) -> Var {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let q = self.linear(tape, att.q, query);
        let k = self.linear(tape, att.k, memory);
        let v = self.linear(tape, att.v, memory);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_nt(qh, kh);
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s);
                tape.matmul(p, vh)
            })
            .collect();
        let o = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.linear(tape, att.o, o)
    }

    fn modulate(tape: &mut Tape, x: Var, beta: Var, gamma: Var) -> Var {
        let n = tape.layer_norm(x);
        let scale = tape.add_const(beta, 1.0);
        let y = tape.mul_row(n, scale);
        tape.add_row(y, gamma)
    }

    fn gated(tape: &mut Tape, x: Var, alpha: Var, branch: Var) -> Var {
        let g = tape.mul_row(branch, alpha);
        tape.add(x, g)
    }

    fn block(&self, tape: &mut Tape, index: usize, x: Var, past: Var, prior: Var, c: &CoeffVars) -> Var {
        let b = &self.layout.blocks[index];
        let (a, be, ga) = (&c.alpha, &c.beta, &c.gamma);
        // self-attention
        let h = Self::modulate(tape, x, be[0], ga[0]);
        let h = self.attention(tape, b.mhsa, h, h);
        let z1 = Self::gated(tape, x, a[0], h);
        // past-frame memory
        let m = Self::modulate(tape, past, be[1], ga[1]);
        let h = self.attention(tape, b.mhca, z1, m);
        let z2 = Self::gated(tape, z1, a[1], h);
        // projected prior, same attention weights
        let (b3, g3) = if self.config.independent_modulation {
            (be[2], ga[2])
        } else {
            (be[1], ga[1])
        };
        let m = Self::modulate(tape, prior, b3, g3);
        let h = self.attention(tape, b.mhca, z2, m);
        let z3 = Self::gated(tape, z2, a[2], h);
        // feed-forward
        let h = Self::modulate(tape, z3, be[3], ga[3]);
        let h = self.linear(tape, b.mlp_in, h);
        let h = tape.gelu(h);
        let h = self.linear(tape, b.mlp_out, h);
        Self::gated(tape, z3, a[3], h)
    }

    fn conditioning(&self, tape: &mut Tape, a: &Action4, tau: usize) -> Var {
        let d = self.config.cond_dim;
        let nu = tape.constant(Matrix::from_vec(1, d, embed::embed_action(a, tau, d)));
        match self.layout.cond {
            Some((fc1, fc2)) => {
                let h = self.linear(tape, fc1, nu);
                let h = tape.silu(h);
                let h = self.linear(tape, fc2, h);
                tape.add(nu, h)
            }
            None => nu,
        }
    }

    fn coeff_vars(&self, tape: &mut Tape, block: usize, cond: Var) -> CoeffVars {
        let d = self.config.d_model;
        let s = tape.silu(cond);
        let all = self.linear(tape, self.layout.blocks[block].adaln, s);
        let rows: Vec<Var> = (0..14).map(|i| tape.slice_cols(all, i * d, d)).collect();
        CoeffVars {
            alpha: rows[0..4].to_vec(),
            beta: rows[4..9].to_vec(),
            gamma: rows[9..14].to_vec(),
        }
    }

    fn check_latent(&self, g: &LatentGrid, what: &str) -> Result<()> {
        if g.shape() != self.config.latent_shape() || g.data.len() != g.channels * g.height * g.width {
            return Err(Error::invalid(format!(
                "{what} latent {:?} does not match model latent {:?}",
                g.shape(),
                self.config.latent_shape()
            )));
        }
        Ok(())
    }

    fn embed_tokens(&self, tape: &mut Tape, lin: Linear, g: &LatentGrid, extra: Option<usize>) -> Var {
        let t = tape.constant(g.to_tokens());
        let x = self.linear(tape, lin, t);
        let pos = self.p(tape, self.layout.pos);
        let x = tape.add(x, pos);
        match extra {
            Some(e) => {
                let e = self.p(tape, e);
                tape.add_row(x, e)
            }
            None => x,
        }
    }

    /// Records the full network; returns the trunk input tokens, the trunk
    /// output tokens and the predicted noise tokens.
    fn record(
        &self,
        tape: &mut Tape,
        x_tau: &LatentGrid,
        past: &[LatentGrid],
        prior: &LatentGrid,
        a: &Action4,
        tau: usize,
    ) -> Result<(Var, Var, Var)> {
        if past.len() != self.config.context {
            return Err(Error::invalid(format!(
                "model expects {} past frames, got {}",
                self.config.context,
                past.len()
            )));
        }
        self.check_latent(x_tau, "noisy")?;
        self.check_latent(prior, "prior")?;
        for p in past {
            self.check_latent(p, "past")?;
        }
        if tau >= self.schedule.steps() {
            return Err(Error::invalid(format!("diffusion step {tau} out of range")));
        }
        if !a.is_finite() {
            return Err(Error::invalid("non-finite action"));
        }
        let cond = self.conditioning(tape, a, tau);
        let x0 = self.embed_tokens(tape, self.layout.in_noisy, x_tau, None);
        let past_tokens: Vec<Var> = past
            .iter()
            .enumerate()
            .map(|(i, g)| self.embed_tokens(tape, self.layout.in_context, g, Some(self.layout.frame_emb[i])))
            .collect();
        let memory = if past_tokens.len() == 1 {
            past_tokens[0]
        } else {
            tape.concat_rows(&past_tokens)
        };
        let prior_tokens = self.embed_tokens(tape, self.layout.in_context, prior, Some(self.layout.prior_emb));
        let mut x = x0;
        let mut last = None;
        for i in 0..self.config.blocks {
            let c = self.coeff_vars(tape, i, cond);
            x = self.block(tape, i, x, memory, prior_tokens, &c);
            last = Some(c);
        }
        let c = last.expect("at least one block");
        let h = Self::modulate(tape, x, c.beta[4], c.gamma[4]);
        let out = self.linear(tape, self.layout.head, h);
        Ok((x0, x, out))
    }

    /// Predicted noise for `x_tau` at step `tau`.
    pub fn denoise(
        &self,
        x_tau: &LatentGrid,
        past: &[LatentGrid],
        prior: &LatentGrid,
        a: &Action4,
        tau: usize,
    ) -> Result<LatentGrid> {
        let mut tape = Tape::new();
        let (_, _, out) = self.record(&mut tape, x_tau, past, prior, a, tau)?;
        LatentGrid::from_tokens(tape.value(out), x_tau.height, x_tau.width)
    }

    /// Tokens entering and leaving the block stack (before the output head).
    pub fn trunk_tokens(
        &self,
        x_tau: &LatentGrid,
        past: &[LatentGrid],
        prior: &LatentGrid,
        a: &Action4,
        tau: usize,
    ) -> Result<(Matrix, Matrix)> {
        let mut tape = Tape::new();
        let (x0, x, _) = self.record(&mut tape, x_tau, past, prior, a, tau)?;
        Ok((tape.value(x0).clone(), tape.value(x).clone()))
    }

    /// AdaLN output of `block` for the conditioning of `(a, tau)`.
    pub fn adaln_coeffs(&self, block: usize, a: &Action4, tau: usize) -> Result<ModulationCoeffs> {
        if block >= self.config.blocks {
            return Err(Error::invalid(format!("block {block} out of range")));
        }
        let mut tape = Tape::new();
        let cond = self.conditioning(&mut tape, a, tau);
        let c = self.coeff_vars(&mut tape, block, cond);
        let stack = |vars: &[Var]| {
            let d = self.config.d_model;
            let mut m = Matrix::zeros(vars.len(), d);
            for (r, v) in vars.iter().enumerate() {
                m.data[r * d..(r + 1) * d].copy_from_slice(&tape.value(*v).data);
            }
            m
        };
        Ok(ModulationCoeffs {
            alpha: stack(&c.alpha),
            beta: stack(&c.beta),
            gamma: stack(&c.gamma),
        })
    }

    /// One block applied to token matrices with explicit coefficients.
    pub fn cdit_block(
        &self,
        block: usize,
        x: &Matrix,
        past: &Matrix,
        prior: &Matrix,
        coeffs: &ModulationCoeffs,
    ) -> Result<Matrix> {
        let d = self.config.d_model;
        if block >= self.config.blocks {
            return Err(Error::invalid(format!("block {block} out of range")));
        }
        if x.cols != d || past.cols != d || prior.cols != d {
            return Err(Error::invalid(format!("token width must be {d}")));
        }
        if coeffs.alpha.shape() != (4, d) || coeffs.beta.shape() != (5, d) || coeffs.gamma.shape() != (5, d) {
            return Err(Error::invalid("modulation coefficient shapes"));
        }
        let mut tape = Tape::new();
        let mut rows = |m: &Matrix| -> Vec<Var> {
            (0..m.rows)
                .map(|r| tape.constant(Matrix::from_vec(1, d, m.row(r).to_vec())))
                .collect()
        };
        let c = CoeffVars {
            alpha: rows(&coeffs.alpha),
            beta: rows(&coeffs.beta),
            gamma: rows(&coeffs.gamma),
        };
        let xv = tape.constant(x.clone());
        let pv = tape.constant(past.clone());
        let qv = tape.constant(prior.clone());
        let out = self.block(&mut tape, block, xv, pv, qv, &c);
        Ok(tape.value(out).clone())
    }

    /// Mean noise-prediction error over `batch` and its gradient for every
    /// parameter tensor (zeros for tensors the loss does not touch).
    pub fn loss_and_grads(&self, batch: &[DenoiseSample]) -> Result<(f64, Vec<Matrix>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            self.check_latent(&s.target, "target")?;
            self.check_latent(&s.noise, "noise")?;
            if s.tau >= self.schedule.steps() {
                return Err(Error::invalid(format!("diffusion step {} out of range", s.tau)));
            }
            let (sig, noi) = (self.schedule.signal(s.tau), self.schedule.noise(s.tau));
            let x_tau = LatentGrid {
                data: s
                    .target
                    .data
                    .iter()
                    .zip(&s.noise.data)
                    .map(|(x, e)| sig * x + noi * e)
                    .collect(),
                ..s.target.clone()
            };
            let (_, _, out) = self.record(&mut tape, &x_tau, &s.past, &s.prior, &s.action, s.tau)?;
            let eps = tape.constant(s.noise.to_tokens());
            losses.push(tape.mse(out, eps));
        }
        let loss = if losses.len() == 1 {
            losses[0]
        } else {
            let row = tape.concat_cols(&losses);
            let n = losses.len();
            let mean = tape.constant(Matrix::from_vec(n, 1, vec![1.0 / n as f64; n]));
            tape.matmul(row, mean)
        };
        let value = tape.value(loss).data[0];
        let grads = tape.backward(loss);
        let mut out: Vec<Matrix> = self
            .params
            .tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows, t.cols))
            .collect();
        for (i, g) in tape.param_grads(&grads) {
            out[i] = g;
        }
        Ok((value, out))
    }

    /// Samples the next latent from pure noise with the strided sampler.
    /// `x0` predictions are clipped to the codec range at every step.
    pub fn sample_latent(
        &self,
        past: &[LatentGrid],
        prior: &LatentGrid,
        a: &Action4,
        rng: &mut impl Rng,
    ) -> Result<LatentGrid> {
        let (c, h, w) = self.config.latent_shape();
        let mut x = LatentGrid {
            channels: c,
            height: h,
            width: w,
            data: (0..c * h * w).map(|_| StandardNormal.sample(rng)).collect(),
        };
        let steps = self.schedule.sampling_steps(self.config.sampling_steps);
        for (k, &tau) in steps.iter().enumerate() {
            let eps = self.denoise(&x, past, prior, a, tau)?;
            let (s, n) = (self.schedule.signal(tau), self.schedule.noise(tau));
            let x0: Vec<f64> = x
                .data
                .iter()
                .zip(&eps.data)
                .map(|(xv, e)| ((xv - n * e) / s).clamp(codec::LATENT_MIN, codec::LATENT_MAX))
                .collect();
            let Some(&prev) = steps.get(k + 1) else {
                x.data = x0;
                break;
            };
            let eps: Vec<f64> = x.data.iter().zip(&x0).map(|(xv, x0v)| (xv - s * x0v) / n).collect();
            let (ab, ab_prev) = (self.schedule.alpha_bar[tau], self.schedule.alpha_bar[prev]);
            let sigma = self.config.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt();
            let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            let sp = ab_prev.sqrt();
            for i in 0..x.data.len() {
                let z: f64 = if sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
                x.data[i] = sp * x0[i] + dir * eps[i] + sigma * z;
            }
        }
        Ok(x)
    }

    /// Encodes the context, samples and decodes the next frame. The result
    /// carries no depth.
    pub fn predict_frame(
        &self,
        past: &[&FrameRGBD],
        prior: &FrameRGBD,
        a: &Action4,
        rng: &mut impl Rng,
    ) -> Result<FrameRGBD> {
        let codec = self.codec();
        let past: Vec<LatentGrid> = past.iter().map(|f| codec.encode(f)).collect::<Result<_>>()?;
        let prior = codec.encode(prior)?;
        let latent = self.sample_latent(&past, &prior, a, rng)?;
        let mut frame = codec.decode(&latent)?;
        for v in &mut frame.rgb {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(frame)
    }
}
