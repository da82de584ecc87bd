use serde::{Deserialize, Serialize};

use super::lira::{leave_one_out_from_losses, VarianceMode};
use super::loss::{loss_matrix, LossConfig};
use super::roc::tpr_at_fpr;
use super::shadow::ShadowEnsemble;
use crate::data::Dataset;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressPoint {
    pub step: u64,
    pub tpr: f64,
    /// Score threshold realizing the FPR bound at this checkpoint.
    pub threshold: f64,
}

/// First checkpoint at which a member `(model, example)` pair scored above
/// that checkpoint's threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstSuccess {
    pub model: usize,
    pub example: usize,
    pub step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub points: Vec<ProgressPoint>,
    pub first_success: Vec<FirstSuccess>,
}

/// Leave-one-out LiRA at each checkpoint of the ensemble's trails, all
/// models taken at the same step.
pub fn training_progress_attack(
    ensemble: &ShadowEnsemble,
    s: &NoiseSchedule,
    data: &Dataset,
    examples: &[usize],
    cfg: &LossConfig,
    fpr: f64,
    mode: VarianceMode,
) -> Result<ProgressReport> {
    if ensemble.trails.len() != ensemble.len() || ensemble.trails.iter().any(|t| t.is_empty()) {
        return Err(Error::State(
            "ensemble was trained without checkpoint trails".into(),
        ));
    }
    let depth = ensemble.trails[0].len();
    if ensemble.trails.iter().any(|t| t.len() != depth) {
        return Err(Error::State("checkpoint trails differ in length".into()));
    }
    let masks: Vec<Vec<bool>> = ensemble
        .masks
        .iter()
        .map(|m| examples.iter().map(|&j| m[j]).collect())
        .collect();
    let mut points = Vec::with_capacity(depth);
    let mut first: Vec<FirstSuccess> = Vec::new();
    let mut prev_step = None;
    for c in 0..depth {
        let models: Vec<_> = ensemble.trails.iter().map(|t| t[c].clone()).collect();
        let step = models[0].step;
        if models.iter().any(|m| m.step != step) || prev_step.is_some_and(|p| p >= step) {
            return Err(Error::State(
                "checkpoints must be aligned and ordered by step".into(),
            ));
        }
        prev_step = Some(step);
        let losses = loss_matrix(&models, s, data, examples, cfg)?;
        let set = leave_one_out_from_losses(&losses, &masks, examples, cfg, mode)?;
        let roc = set.roc()?;
        let tpr = tpr_at_fpr(&roc, fpr);
        let threshold = roc
            .fpr
            .iter()
            .zip(&roc.tpr)
            .zip(&roc.thresholds)
            .filter(|((f, t), _)| **f <= fpr + 1e-12 && **t == tpr)
            .map(|(_, &th)| th)
            .next()
            .unwrap_or(f64::INFINITY);
        if c == 0 {
            first = set
                .targets
                .iter()
                .zip(&set.labels)
                .filter(|(_, &l)| l)
                .map(|(&(model, example), _)| FirstSuccess {
                    model,
                    example,
                    step: None,
                })
                .collect();
        }
        let mut k = 0;
        for ((_, &score), &label) in set.targets.iter().zip(&set.scores).zip(&set.labels) {
            if label {
                if first[k].step.is_none() && score >= threshold {
                    first[k].step = Some(step);
                }
                k += 1;
            }
        }
        points.push(ProgressPoint {
            step,
            tpr,
            threshold,
        });
    }
    Ok(ProgressReport {
        points,
        first_success: first,
    })
}
