use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::nn::Arch;
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::{train, TrainingConfig};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// Every model draws its own random subset; redrawn until every example
    /// is IN and OUT somewhere (ensembles of four or more).
    Independent,
    /// Models come in complementary pairs (split 0.5, even count, even N), so
    /// every example is IN for exactly half the ensemble.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowConfig {
    pub count: usize,
    pub split: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
    /// Keep every model's checkpoint trail (requires `train.checkpoint_every`).
    pub keep_checkpoints: bool,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig {
            count: 8,
            split: 0.5,
            strategy: MaskStrategy::Paired,
            seed: 0,
            keep_checkpoints: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShadowEnsemble {
    pub models: Vec<DenoiserModel>,
    /// `masks[i][j]`: example `j` was in model `i`'s training split.
    pub masks: Vec<Vec<bool>>,
    pub split: f64,
    pub base_id: String,
    /// Per model, checkpoints from step 0 onwards (empty unless kept).
    pub trails: Vec<Vec<DenoiserModel>>,
}

impl ShadowEnsemble {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Examples lacking an IN or an OUT model among `models`.
    pub fn uncovered(masks: &[&Vec<bool>], n: usize) -> Vec<usize> {
        (0..n)
            .filter(|&j| !masks.iter().any(|m| m[j]) || !masks.iter().any(|m| !m[j]))
            .collect()
    }
}

const MAX_MASK_DRAWS: u64 = 10_000;

/// Membership masks with exactly `floor(split * n)` members per row.
pub fn draw_masks(
    n: usize,
    count: usize,
    split: f64,
    strategy: MaskStrategy,
    master: u64,
) -> Result<Vec<Vec<bool>>> {
    if count < 2 {
        return Err(Error::Config(
            "a shadow ensemble needs at least two models".into(),
        ));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::Config(format!(
            "split must lie in (0, 1), got {split}"
        )));
    }
    let k = (split * n as f64).floor() as usize;
    if k == 0 || k == n {
        return Err(Error::Config(format!(
            "split {split} of {n} examples leaves one side empty"
        )));
    }
    let draw_row = |rng: &mut seed::Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut row = vec![false; n];
        for &i in &idx[..k] {
            row[i] = true;
        }
        row
    };
    match strategy {
        MaskStrategy::Paired => {
            if !count.is_multiple_of(2) || split != 0.5 || !n.is_multiple_of(2) {
                return Err(Error::Config(
                    "paired masks need an even count, split 0.5 and an even example count".into(),
                ));
            }
            let mut rng = seed::rng_for(master, &[0x3a5c]);
            let mut masks = Vec::with_capacity(count);
            for _ in 0..count / 2 {
                let row = draw_row(&mut rng);
                masks.push(row.iter().map(|&b| !b).collect());
                masks.insert(masks.len() - 1, row);
            }
            Ok(masks)
        }
        MaskStrategy::Independent => {
            for attempt in 0..MAX_MASK_DRAWS {
                let mut rng = seed::rng_for(master, &[0x3a5d, attempt]);
                let masks: Vec<Vec<bool>> = (0..count).map(|_| draw_row(&mut rng)).collect();
                let refs: Vec<&Vec<bool>> = masks.iter().collect();
                if count < 4 || ShadowEnsemble::uncovered(&refs, n).is_empty() {
                    return Ok(masks);
                }
            }
            Err(Error::Config(format!(
                "no covering masks found in {MAX_MASK_DRAWS} draws"
            )))
        }
    }
}

/// Trains `cfg.count` models on seeded random splits of `data`. Model `i`
/// trains with seed `derive_named(train.seed, "shadow", i)`.
pub fn train_shadow_models(
    data: &Dataset,
    cfg: &ShadowConfig,
    train_cfg: &TrainingConfig,
    s: &NoiseSchedule,
    arch: &Arch,
) -> Result<ShadowEnsemble> {
    let masks = draw_masks(data.len(), cfg.count, cfg.split, cfg.strategy, cfg.seed)?;
    let outcomes: Vec<_> = masks
        .par_iter()
        .enumerate()
        .map(|(i, mask)| {
            let rows: Vec<usize> = (0..data.len()).filter(|&j| mask[j]).collect();
            let subset = data.select(&rows, &format!("shadow{i}"));
            let tc = TrainingConfig {
                seed: seed::derive_named(train_cfg.seed, "shadow", i as u64),
                ..train_cfg.clone()
            };
            train(&subset, &tc, s, arch).map_err(|e| Error::Shadow {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::with_capacity(outcomes.len());
    let mut trails = Vec::new();
    for o in outcomes {
        models.push(o.model);
        if cfg.keep_checkpoints {
            trails.push(o.checkpoints);
        }
    }
    Ok(ShadowEnsemble {
        models,
        masks,
        split: cfg.split,
        base_id: data.provenance().source.clone(),
        trails,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_split_sizes() {
        for strategy in [MaskStrategy::Independent, MaskStrategy::Paired] {
            let m = draw_masks(100, 2, 0.5, strategy, 3).unwrap();
            assert!(m.iter().all(|r| r.iter().filter(|&&b| b).count() == 50));
        }
        let m = draw_masks(101, 3, 0.3, MaskStrategy::Independent, 3).unwrap();
        assert!(m.iter().all(|r| r.iter().filter(|&&b| b).count() == 30));
    }

    #[test]
    fn coverage_and_pairing() {
        let m = draw_masks(512, 16, 0.5, MaskStrategy::Independent, 1).unwrap();
        assert!(ShadowEnsemble::uncovered(&m.iter().collect::<Vec<_>>(), 512).is_empty());
        let p = draw_masks(64, 8, 0.5, MaskStrategy::Paired, 1).unwrap();
        for pair in p.chunks(2) {
            assert!(pair[0].iter().zip(&pair[1]).all(|(a, b)| a != b));
        }
        assert_eq!(draw_masks(64, 8, 0.5, MaskStrategy::Paired, 1).unwrap(), p);
        assert!(draw_masks(64, 7, 0.5, MaskStrategy::Paired, 1).is_err());
        assert!(draw_masks(64, 1, 0.5, MaskStrategy::Independent, 1).is_err());
        assert!(draw_masks(64, 4, 1.0, MaskStrategy::Independent, 1).is_err());
    }
}
