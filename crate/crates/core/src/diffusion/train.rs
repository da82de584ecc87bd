//! Minibatch training of the noise predictor on the Monte-Carlo diffusion
//! objective, with optional flip augmentation and per-example
//! clip-and-noise aggregation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::model::{loss_and_grad, DenoiserModel};
use crate::diffusion::nn::Arch;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::flip_horizontal_in_place;
use crate::seed;

/// Adaptive-moment optimizer constants; recorded in every checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const OPTIMIZER: OptimizerParams = OptimizerParams {
    beta1: 0.9,
    beta2: 0.999,
    eps: 1e-8,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub flip_augment: bool,
    /// Bound on each per-example gradient's 2-norm.
    pub clip_norm: Option<f64>,
    /// Deviation of the Gaussian noise added to the clipped gradient sum, in units of `clip_norm`.
    pub noise_multiplier: Option<f64>,
    /// Emit a checkpoint every this many steps (and at step 0); 0 disables.
    pub checkpoint_every: u64,
    /// Cosine decay of the learning rate to zero over `steps` instead of a constant rate.
    pub cosine_decay: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: 4000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            flip_augment: false,
            clip_norm: None,
            noise_multiplier: None,
            checkpoint_every: 0,
            cosine_decay: false,
        }
    }
}

impl TrainingConfig {
    /// Learning rate for the update at zero-based step `k`.
    pub fn rate_at(&self, k: u64) -> f64 {
        if !self.cosine_decay {
            return self.learning_rate;
        }
        let frac = k as f64 / self.steps.max(1) as f64;
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        match (self.noise_multiplier, self.clip_norm) {
            (Some(_), None) => Err(Error::Config(
                "noise_multiplier requires clip_norm (clip before noising)".into(),
            )),
            (Some(z), Some(_)) if !(z >= 0.0 && z.is_finite()) => Err(Error::Config(format!(
                "noise_multiplier must be non-negative, got {z}"
            ))),
            _ => Ok(()),
        }
    }
}

/// One drawn minibatch. `clean` holds the (possibly flipped) model-space images
/// that get noised; flipping happens before noising.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub rows: Vec<usize>,
    pub flipped: Vec<bool>,
    pub clean: Vec<f32>,
    pub t: Vec<usize>,
    pub eps: Vec<f32>,
    pub labels: Option<Vec<u32>>,
}

/// Draws the minibatch used at `step`: rows uniformly with replacement,
/// `t` uniform in `[1, T]`, fresh standard normal noise per example.
pub fn draw_batch(
    data: &Dataset,
    cfg: &TrainingConfig,
    s: &NoiseSchedule,
    rng: &mut seed::Rng,
) -> TrainingBatch {
    let d = data.shape().dim();
    let b = cfg.batch_size;
    let mut batch = TrainingBatch {
        rows: Vec::with_capacity(b),
        flipped: Vec::with_capacity(b),
        clean: vec![0.0; b * d],
        t: Vec::with_capacity(b),
        eps: vec![0.0; b * d],
        labels: data.labels().map(|_| Vec::with_capacity(b)),
    };
    for i in 0..b {
        let row = rng.random_range(0..data.len());
        let flip = cfg.flip_augment && rng.random_bool(0.5);
        let dst = &mut batch.clean[i * d..(i + 1) * d];
        data.image(row).write_model_space(dst);
        if flip {
            flip_horizontal_in_place(data.shape(), dst);
        }
        batch.t.push(rng.random_range(1..=s.steps()));
        for e in &mut batch.eps[i * d..(i + 1) * d] {
            *e = StandardNormal.sample(rng);
        }
        batch.rows.push(row);
        batch.flipped.push(flip);
        if let (Some(l), Some(lab)) = (batch.labels.as_mut(), data.label(row)) {
            l.push(lab);
        }
    }
    batch
}

/// Rescales `g` so its 2-norm is at most `bound`; returns the resulting norm.
pub fn clip_gradient(g: &mut [f32], bound: f64) -> f64 {
    let norm = l2_norm(g);
    if norm <= bound {
        return norm;
    }
    // shrink a hair below the bound so f32 rounding cannot push it over
    let scale = (bound / norm * (1.0 - 1e-6)) as f32;
    g.iter_mut().for_each(|v| *v *= scale);
    l2_norm(g)
}

fn l2_norm(g: &[f32]) -> f64 {
    g.iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// Snapshots at step 0 and every `checkpoint_every` steps, ending with the final model.
    pub checkpoints: Vec<DenoiserModel>,
    /// Mean minibatch loss per step.
    pub losses: Vec<f64>,
    /// Largest per-example gradient norm that entered aggregation (clipping mode only).
    pub max_aggregated_norm: Option<f64>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f32], g: &[f32], lr: f64) {
        let OptimizerParams { beta1, beta2, eps } = OPTIMIZER;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let (b1, b2, e) = (beta1 as f32, beta2 as f32, (eps * c2.sqrt()) as f32);
        for (((p, &gi), m), v) in theta.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
            *p -= step * *m / (v.sqrt() + e);
        }
    }
}

/// Trains a freshly initialized model. Fully determined by `cfg.seed`.
pub fn train(
    data: &Dataset,
    cfg: &TrainingConfig,
    s: &NoiseSchedule,
    arch: &Arch,
) -> Result<TrainOutcome> {
    let model = DenoiserModel::init(arch, s, seed::derive_named(cfg.seed, "init", 0))?;
    train_from(model, data, cfg, s)
}

/// Continues training `model` for `cfg.steps` further steps.
pub fn train_from(
    mut model: DenoiserModel,
    data: &Dataset,
    cfg: &TrainingConfig,
    s: &NoiseSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    if data.shape() != model.arch().input {
        return Err(Error::shape(model.arch().input, data.shape()));
    }
    if model.arch().classes().is_some() && data.labels().is_none() {
        return Err(Error::Config(
            "class-conditional model needs a labelled dataset".into(),
        ));
    }
    let net = model.network().clone();
    let d = data.shape().dim();
    let mut adam = Adam::new(net.param_count());
    let mut grads = vec![0.0f32; net.param_count()];
    let mut single = vec![0.0f32; net.param_count()];
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    let mut checkpoints = Vec::new();
    let mut max_norm: Option<f64> = None;
    let start = model.step;
    if cfg.checkpoint_every > 0 {
        checkpoints.push(model.clone());
    }

    for k in 0..cfg.steps {
        let step = start + k;
        let mut rng = seed::rng_for(cfg.seed, &[0x7a1, step]);
        let batch = draw_batch(data, cfg, s, &mut rng);
        grads.iter_mut().for_each(|g| *g = 0.0);
        let b = cfg.batch_size;
        let loss = match cfg.clip_norm {
            None => {
                let l = loss_and_grad(
                    &net,
                    model.theta(),
                    s,
                    &batch.clean,
                    &batch.t,
                    &batch.eps,
                    batch.labels.as_deref(),
                    &mut grads,
                )?;
                l.iter().sum::<f64>() / b as f64
            }
            Some(bound) => {
                let mut total = 0.0;
                for i in 0..b {
                    single.iter_mut().for_each(|g| *g = 0.0);
                    let r = i * d..(i + 1) * d;
                    let lab = batch.labels.as_ref().map(|l| [l[i]]);
                    let l = loss_and_grad(
                        &net,
                        model.theta(),
                        s,
                        &batch.clean[r.clone()],
                        &batch.t[i..i + 1],
                        &batch.eps[r],
                        lab.as_ref().map(|l| &l[..]),
                        &mut single,
                    )?;
                    total += l[0];
                    let norm = clip_gradient(&mut single, bound);
                    max_norm = Some(max_norm.map_or(norm, |m: f64| m.max(norm)));
                    for (g, &v) in grads.iter_mut().zip(&single) {
                        *g += v;
                    }
                }
                if let Some(z) = cfg.noise_multiplier {
                    let std = z * bound;
                    for g in grads.iter_mut() {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        *g += (n * std) as f32;
                    }
                }
                let inv = 1.0 / b as f32;
                grads.iter_mut().for_each(|g| *g *= inv);
                total / b as f64
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        adam.step(model.theta_mut(), &grads, cfg.rate_at(k));
        model.step = step + 1;
        if cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push(model.clone());
        }
    }
    if cfg.checkpoint_every > 0 && checkpoints.last().map(|c| c.step) != Some(model.step) {
        checkpoints.push(model.clone());
    }
    Ok(TrainOutcome {
        model,
        checkpoints,
        losses,
        max_aggregated_norm: max_norm,
    })
}
