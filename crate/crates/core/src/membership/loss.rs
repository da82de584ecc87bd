use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{flip_horizontal_in_place, ImageTensor};
use crate::seed;

/// How a per-example loss is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub t: usize,
    pub n_noise: usize,
    pub use_flip: bool,
    /// Keys the noise draws; draw `k` of example `id` is the same for every model.
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            t: 10,
            n_noise: 1,
            use_flip: false,
            seed: 0,
        }
    }
}

impl LossConfig {
    fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.n_noise == 0 {
            return Err(Error::Config("n_noise must be at least 1".into()));
        }
        if self.t == 0 || self.t > s.steps() {
            return Err(Error::Config(format!(
                "timestep {} outside [1, {}]",
                self.t,
                s.steps()
            )));
        }
        Ok(())
    }
}

const ROWS_PER_BATCH: usize = 256;

/// Draw `k` of the noise used for example `id`.
pub(crate) fn noise_draw(cfg: &LossConfig, id: usize, k: usize, d: usize) -> Vec<f32> {
    let mut rng = seed::rng_for(cfg.seed, &[0xe55, id as u64, k as u64]);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Noise-averaged loss of one image. `id` selects the noise stream; the
/// flipped copy reuses the same draws, so a mirror-symmetric image scores
/// exactly as without flips.
pub fn averaged_loss(
    m: &DenoiserModel,
    s: &NoiseSchedule,
    x: &ImageTensor,
    label: Option<u32>,
    id: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate(s)?;
    if x.shape() != m.arch().input {
        return Err(Error::shape(m.arch().input, x.shape()));
    }
    Ok(losses_for(m, s, &[(x, label, id)], cfg)?[0])
}

/// `averaged_loss` for the dataset rows `ids` (the row index keys the noise).
pub fn example_losses(
    m: &DenoiserModel,
    s: &NoiseSchedule,
    data: &Dataset,
    ids: &[usize],
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    cfg.validate(s)?;
    if data.shape() != m.arch().input {
        return Err(Error::shape(m.arch().input, data.shape()));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= data.len()) {
        return Err(Error::Argument(format!(
            "example {bad} outside dataset of {}",
            data.len()
        )));
    }
    let items: Vec<_> = ids
        .iter()
        .map(|&i| (data.image(i), data.label(i), i))
        .collect();
    losses_for(m, s, &items, cfg)
}

/// Losses of every model on `ids`: `out[model][k]` is the loss on `ids[k]`.
pub fn loss_matrix(
    models: &[DenoiserModel],
    s: &NoiseSchedule,
    data: &Dataset,
    ids: &[usize],
    cfg: &LossConfig,
) -> Result<Vec<Vec<f64>>> {
    models
        .iter()
        .map(|m| example_losses(m, s, data, ids, cfg))
        .collect()
}

fn losses_for(
    m: &DenoiserModel,
    s: &NoiseSchedule,
    items: &[(&ImageTensor, Option<u32>, usize)],
    cfg: &LossConfig,
) -> Result<Vec<f64>> {
    let shape = m.arch().input;
    let d = shape.dim();
    let conditional = m.arch().classes().is_some();
    let views = if cfg.use_flip { 2 } else { 1 };
    let per_item = cfg.n_noise * views;
    // one row per (item, draw, view), flattened so batches can straddle items
    let rows = items.len() * per_item;
    let chunks: Vec<(usize, usize)> = (0..rows)
        .step_by(ROWS_PER_BATCH)
        .map(|a| (a, (a + ROWS_PER_BATCH).min(rows)))
        .collect();
    let parts = chunks
        .par_iter()
        .map(|&(a, b)| {
            let n = b - a;
            let mut clean = vec![0.0f32; n * d];
            let mut eps = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(if conditional { n } else { 0 });
            for (r, row) in (a..b).enumerate() {
                let (item, rest) = (row / per_item, row % per_item);
                let (k, flipped) = (rest / views, rest % views == 1);
                let (x, label, id) = items[item];
                let dst = &mut clean[r * d..(r + 1) * d];
                x.write_model_space(dst);
                if flipped {
                    flip_horizontal_in_place(shape, dst);
                }
                eps.extend(noise_draw(cfg, id, k, d));
                if conditional {
                    labels.push(label.ok_or_else(|| {
                        Error::Config("class-conditional model needs labels".into())
                    })?);
                }
            }
            let t = vec![cfg.t; n];
            m.batch_losses(s, &clean, &t, &eps, conditional.then_some(&labels[..]))
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<f64> = parts.into_iter().flatten().collect();
    Ok(flat
        .chunks(per_item)
        .map(|c| c.iter().sum::<f64>() / per_item as f64)
        .collect())
}
