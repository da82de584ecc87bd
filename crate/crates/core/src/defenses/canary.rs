use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::toy::uniform_noise;
use crate::data::Dataset;
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::nn::Arch;
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::{train, TrainingConfig};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::membership::{averaged_loss, LossConfig};
use crate::metrics::format_sig;
use crate::seed;
use crate::stats::ks_two_sample;

/// Uniform-noise canaries; some are inserted into training data.
#[derive(Debug, Clone, PartialEq)]
pub struct CanaryPool {
    pub canaries: Vec<ImageTensor>,
    /// `(canary id, copies inserted)`.
    pub inserted: Vec<(usize, usize)>,
    /// Per-canary loss under the audited model, once measured.
    pub losses: Option<Vec<f64>>,
}

impl CanaryPool {
    pub fn size(&self) -> usize {
        self.canaries.len()
    }

    /// Copies of canary `id` in the training data (0 when not inserted).
    pub fn copies(&self, id: usize) -> usize {
        self.inserted.iter().find(|x| x.0 == id).map_or(0, |x| x.1)
    }
}

/// `p` i.i.d. uniform-noise images; `p` must be a power of two so the
/// maximum exposure `log2 p` is an integer.
pub fn generate_canaries(p: usize, shape: Shape, seed: u64) -> Result<CanaryPool> {
    if p < 2 || !p.is_power_of_two() {
        return Err(Error::Config(format!(
            "canary pool size {p} is not a power of two >= 2"
        )));
    }
    Ok(CanaryPool {
        canaries: uniform_noise(shape, p, seed::derive(seed, &[0xca7])),
        inserted: vec![],
        losses: None,
    })
}

/// `log2 P - log2 rank`, with `rank` the average 1-based position of the
/// canary's loss among all pool losses in ascending order.
pub fn exposure(pool: &CanaryPool, id: usize) -> Result<f64> {
    let losses = pool
        .losses
        .as_ref()
        .ok_or_else(|| Error::State("canary losses have not been measured".into()))?;
    let l = *losses
        .get(id)
        .ok_or_else(|| Error::Argument(format!("canary {id} outside pool of {}", losses.len())))?;
    let less = losses.iter().filter(|&&x| x < l).count();
    let equal = losses.iter().filter(|&&x| x == l).count();
    let rank = less as f64 + (equal as f64 + 1.0) / 2.0;
    Ok((losses.len() as f64).log2() - rank.log2())
}

pub fn exposures(pool: &CanaryPool) -> Result<Vec<f64>> {
    (0..pool.size()).map(|i| exposure(pool, i)).collect()
}

/// Mean exposure of a uniformly random rank: `log2 P - log2(P!) / P`.
pub fn null_mean_exposure(p: usize) -> f64 {
    let log2_fact: f64 = (1..=p).map(|r| (r as f64).log2()).sum();
    (p as f64).log2() - log2_fact / p as f64
}

/// Monte-Carlo exposures of `count` canaries with i.i.d. uniform ranks in `1..=p`.
pub fn exposure_null(p: usize, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng_for(seed, &[0x9011]);
    let log_p = (p as f64).log2();
    (0..count)
        .map(|_| log_p - (rng.random_range(1..=p) as f64).log2())
        .collect()
}

/// Exposure of each loss in `losses` ranked against `reference` plus itself,
/// so the implied pool size is `reference.len() + 1`. Ties take the average rank.
pub fn reference_exposures(losses: &[f64], reference: &[f64]) -> Vec<f64> {
    let log_p = ((reference.len() + 1) as f64).log2();
    losses
        .iter()
        .map(|&l| {
            let less = reference.iter().filter(|&&x| x < l).count();
            let equal = reference.iter().filter(|&&x| x == l).count();
            log_p - (less as f64 + (equal as f64 + 2.0) / 2.0).log2()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanaryAuditConfig {
    /// Canary `j` is inserted `duplicate_counts[j]` times (0 leaves it out).
    pub duplicate_counts: Vec<usize>,
    pub loss: LossConfig,
    pub null_draws: usize,
    pub seed: u64,
}

impl Default for CanaryAuditConfig {
    fn default() -> Self {
        CanaryAuditConfig {
            duplicate_counts: vec![1, 2, 4, 8, 16],
            loss: LossConfig {
                t: 25,
                n_noise: 20,
                use_flip: false,
                seed: 0,
            },
            null_draws: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureRow {
    pub copies: usize,
    pub canaries: usize,
    pub max_exposure: f64,
    pub mean_exposure: f64,
}

#[derive(Debug, Clone)]
pub struct CanaryAudit {
    pub pool: CanaryPool,
    pub model: DenoiserModel,
    pub exposures: Vec<f64>,
    /// One row per distinct copy count, ascending; copy count 0 covers the
    /// canaries left out of training.
    pub table: Vec<ExposureRow>,
    /// Exposures of the left-out canaries, each ranked against its own `P - 1`
    /// fresh noise images the model never saw, ascending by canary id.
    pub reference_exposures: Vec<f64>,
    /// Two-sample KS of `reference_exposures` against the uniform-rank null.
    pub ks_statistic: f64,
    pub ks_p: f64,
}

/// Trains one model on `data` plus the inserted canaries, measures every
/// canary's loss and tabulates exposure by copy count.
pub fn canary_audit(
    data: &Dataset,
    mut pool: CanaryPool,
    cfg: &CanaryAuditConfig,
    train_cfg: &TrainingConfig,
    arch: &Arch,
    s: &NoiseSchedule,
) -> Result<CanaryAudit> {
    if cfg.duplicate_counts.len() > pool.size() {
        return Err(Error::Config("more duplicate counts than canaries".into()));
    }
    if pool.canaries.iter().any(|c| c.shape() != data.shape()) {
        return Err(Error::shape(data.shape(), pool.canaries[0].shape()));
    }
    pool.inserted = cfg
        .duplicate_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(j, &c)| (j, c))
        .collect();
    let copies: Vec<ImageTensor> = pool
        .inserted
        .iter()
        .flat_map(|&(j, c)| std::iter::repeat_n(pool.canaries[j].clone(), c))
        .collect();
    // canaries carry class 0 when the data is labelled
    let canary_label = data.labels().map(|_| 0u32);
    let extra_labels = canary_label.map(|l| vec![l; copies.len()]);
    let train_set = data.with_appended(&copies, extra_labels.as_deref(), "canaries")?;
    let model = train(&train_set, train_cfg, s, arch)?.model;
    let label = model.arch().classes().map(|_| 0u32);
    let losses: Vec<f64> = pool
        .canaries
        .par_iter()
        .enumerate()
        .map(|(i, c)| averaged_loss(&model, s, c, label, i, &cfg.loss))
        .collect::<Result<_>>()?;
    pool.losses = Some(losses);
    let exps = exposures(&pool)?;

    let mut counts: Vec<usize> = (0..pool.size()).map(|i| pool.copies(i)).collect();
    counts.sort_unstable();
    counts.dedup();
    let table = counts
        .iter()
        .map(|&c| {
            let v: Vec<f64> = (0..pool.size())
                .filter(|&i| pool.copies(i) == c)
                .map(|i| exps[i])
                .collect();
            ExposureRow {
                copies: c,
                canaries: v.len(),
                max_exposure: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean_exposure: v.iter().sum::<f64>() / v.len() as f64,
            }
        })
        .collect();

    let p = pool.size();
    let losses = pool.losses.as_ref().expect("just measured");
    // Each left-out canary is ranked against its own fresh reference images,
    // so under the null the ranks are independent and uniform.
    let left_out: Vec<usize> = (0..p).filter(|&i| pool.copies(i) == 0).collect();
    let reference_exposures: Vec<f64> = left_out
        .par_iter()
        .map(|&i| {
            let refs = uniform_noise(
                data.shape(),
                p - 1,
                seed::derive(cfg.seed, &[0x5ef, i as u64]),
            );
            let ids = (p + i * p..).take(p - 1);
            let rl: Vec<f64> = refs
                .iter()
                .zip(ids)
                .map(|(r, id)| averaged_loss(&model, s, r, label, id, &cfg.loss))
                .collect::<Result<_>>()?;
            Ok(reference_exposures(&[losses[i]], &rl)[0])
        })
        .collect::<Result<_>>()?;
    let null = exposure_null(
        p,
        reference_exposures.len() * cfg.null_draws.max(1),
        cfg.seed,
    );
    let (ks_statistic, ks_p) = ks_two_sample(&reference_exposures, &null)?;
    Ok(CanaryAudit {
        pool,
        model,
        exposures: exps,
        table,
        reference_exposures,
        ks_statistic,
        ks_p,
    })
}

pub fn write_exposure_table<W: Write>(out: W, table: &[ExposureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["copies", "canaries", "max_exposure", "mean_exposure"])?;
    for r in table {
        w.write_record([
            r.copies.to_string(),
            r.canaries.to_string(),
            format_sig(r.max_exposure),
            format_sig(r.mean_exposure),
        ])?;
    }
    w.flush()?;
    Ok(())
}
