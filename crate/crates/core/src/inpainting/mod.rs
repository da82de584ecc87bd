//! Reconstruction attack: mask part of a target, inpaint it many times with a
//! model, rank the reconstructions by a main-over-support loss ratio and
//! measure how close the best ones land to the hidden pixels.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::inpaint::{inpaint_many, InpaintConfig};
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::membership::{averaged_loss, LossConfig, ShadowEnsemble};
use crate::metrics::{format_sig, l2_normalized, squared_distance};
use crate::seed;
use crate::stats::{pearson, sign_test};

/// Which pixels are hidden from the inpainter. Every channel of a hidden
/// position is hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum MaskSpec {
    #[default]
    LeftHalf,
    /// A centred rectangle covering about `fraction` of the area.
    CentralFraction {
        fraction: f64,
    },
    /// `round(fraction * h * w)` positions chosen by `seed`.
    Random {
        fraction: f64,
        seed: u64,
    },
    /// Per position (row-major, `h * w`), true where hidden.
    Custom {
        hidden: Vec<bool>,
    },
}


impl MaskSpec {
    /// Per-pixel known mask (true = visible), one entry per value of `shape`.
    pub fn known(&self, shape: Shape) -> Result<Vec<bool>> {
        let (h, w) = (shape.h, shape.w);
        let check = |f: f64| {
            if f > 0.0 && f < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("masked fraction {f} outside (0, 1)")))
            }
        };
        let hidden: Vec<bool> = match self {
            MaskSpec::LeftHalf => (0..h * w).map(|i| i % w < w / 2).collect(),
            MaskSpec::CentralFraction { fraction } => {
                check(*fraction)?;
                let side = fraction.sqrt();
                let (mh, mw) = (
                    ((h as f64 * side).round() as usize).max(1),
                    ((w as f64 * side).round() as usize).max(1),
                );
                let (y0, x0) = ((h - mh.min(h)) / 2, (w - mw.min(w)) / 2);
                (0..h * w)
                    .map(|i| (y0..y0 + mh).contains(&(i / w)) && (x0..x0 + mw).contains(&(i % w)))
                    .collect()
            }
            MaskSpec::Random { fraction, seed: sd } => {
                check(*fraction)?;
                let k = ((fraction * (h * w) as f64).round() as usize).max(1);
                let mut rng = seed::rng_for(*sd, &[0x3a51]);
                let picked = rand::seq::index::sample(&mut rng, h * w, k.min(h * w - 1));
                let mut m = vec![false; h * w];
                for i in picked {
                    m[i] = true;
                }
                m
            }
            MaskSpec::Custom { hidden } => {
                if hidden.len() != h * w {
                    return Err(Error::shape(h * w, hidden.len()));
                }
                if hidden.iter().all(|&b| b) {
                    return Err(Error::Config("custom mask hides every pixel".into()));
                }
                hidden.clone()
            }
        };
        Ok(hidden
            .iter()
            .flat_map(|&hid| std::iter::repeat_n(!hid, shape.c))
            .collect())
    }
}

/// Inpaintings of one target by one model, with their scores once filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionSet {
    pub target: usize,
    pub seeds: Vec<u64>,
    pub reconstructions: Vec<ImageTensor>,
    pub main_loss: Vec<f64>,
    pub support_loss: Vec<f64>,
    /// `main_loss / support_loss`; lower is stronger member evidence.
    pub score: Vec<f64>,
    /// RMS distance to the target over hidden pixels only.
    pub l2_masked: Vec<f64>,
    pub l2_whole: Vec<f64>,
}

impl ReconstructionSet {
    pub fn len(&self) -> usize {
        self.reconstructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reconstructions.is_empty()
    }

    /// Indices by ascending score (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.score.len()).collect();
        idx.sort_by(|&a, &b| self.score[a].total_cmp(&self.score[b]).then(a.cmp(&b)));
        idx
    }

    /// Mean masked and whole-image distance over the `k` best-scored items.
    pub fn top_k_distance(&self, k: usize) -> Result<(f64, f64)> {
        if self.score.len() != self.len() {
            return Err(Error::State("reconstructions have not been scored".into()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!(
                "top_k {k} outside [1, {}]",
                self.len()
            )));
        }
        let top = &self.ranking()[..k];
        let m = |v: &[f64]| top.iter().map(|&i| v[i]).sum::<f64>() / k as f64;
        Ok((m(&self.l2_masked), m(&self.l2_whole)))
    }

    /// All reconstructions as a dataset, e.g. for raw-tensor export.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let shape = self
            .reconstructions
            .first()
            .map(|r| r.shape())
            .ok_or_else(|| Error::State("empty reconstruction set".into()))?;
        Dataset::from_images(
            shape,
            self.reconstructions.clone(),
            &format!("inpaint:{}", self.target),
        )
    }
}

/// Seeds for reconstructions of `target`, independent of the model used.
fn recon_seeds(master: u64, target: usize, n: usize) -> Vec<u64> {
    (0..n as u64)
        .map(|k| seed::derive(master, &[0x1e9, target as u64, k]))
        .collect()
}

/// `n` inpaintings of `target` under `known` (true = visible). Scores stay empty.
#[allow(clippy::too_many_arguments)]
pub fn generate_reconstructions(
    main: &DenoiserModel,
    s: &NoiseSchedule,
    target: &ImageTensor,
    target_id: usize,
    label: Option<u32>,
    known: &[bool],
    n: usize,
    master: u64,
    cfg: &InpaintConfig,
) -> Result<ReconstructionSet> {
    if n == 0 {
        return Err(Error::Config("need at least one reconstruction".into()));
    }
    let seeds = recon_seeds(master, target_id, n);
    let hidden: Vec<usize> = known
        .iter()
        .enumerate()
        .filter(|(_, &k)| !k)
        .map(|(i, _)| i)
        .collect();
    let reconstructions = if hidden.is_empty() {
        vec![target.clone(); n]
    } else {
        let mut masked = target.pixels().to_vec();
        for &i in &hidden {
            masked[i] = 0.0;
        }
        let x_masked = ImageTensor::new(target.shape(), masked)?;
        inpaint_many(main, s, &x_masked, known, &seeds, label, cfg)?
    };
    let l2_masked = reconstructions
        .iter()
        .map(|r| {
            if hidden.is_empty() {
                return 0.0;
            }
            let (a, b): (Vec<f32>, Vec<f32>) = hidden
                .iter()
                .map(|&i| (r.pixels()[i], target.pixels()[i]))
                .unzip();
            (squared_distance(&a, &b) / hidden.len() as f64).sqrt()
        })
        .collect();
    let l2_whole = reconstructions
        .iter()
        .map(|r| l2_normalized(r, target))
        .collect::<Result<_>>()?;
    Ok(ReconstructionSet {
        target: target_id,
        seeds,
        reconstructions,
        main_loss: vec![],
        support_loss: vec![],
        score: vec![],
        l2_masked,
        l2_whole,
    })
}

/// Fills main loss, support loss and their ratio. Item `k` uses noise stream `k`
/// under both models.
pub fn score_contrastive(
    set: &mut ReconstructionSet,
    main: &DenoiserModel,
    support: &DenoiserModel,
    s: &NoiseSchedule,
    label: Option<u32>,
    cfg: &LossConfig,
) -> Result<()> {
    let losses: Vec<(f64, f64)> = set
        .reconstructions
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            Ok((
                averaged_loss(main, s, r, label, k, cfg)?,
                averaged_loss(support, s, r, label, k, cfg)?,
            ))
        })
        .collect::<Result<_>>()?;
    set.main_loss = losses.iter().map(|l| l.0).collect();
    set.support_loss = losses.iter().map(|l| l.1).collect();
    set.score = contrastive_scores(&set.main_loss, &set.support_loss)?;
    Ok(())
}

pub fn contrastive_scores(main: &[f64], support: &[f64]) -> Result<Vec<f64>> {
    main.iter()
        .zip(support)
        .map(|(&m, &s)| {
            if s > 0.0 {
                Ok(m / s)
            } else {
                Err(Error::Degenerate(format!("support loss {s}")))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintAttackConfig {
    pub mask: MaskSpec,
    pub n: usize,
    pub top_k: usize,
    pub t: usize,
    pub n_noise: usize,
    pub seed: u64,
    pub inpaint: InpaintConfig,
}

impl Default for InpaintAttackConfig {
    fn default() -> Self {
        InpaintAttackConfig {
            mask: MaskSpec::LeftHalf,
            n: 200,
            top_k: 10,
            t: 10,
            n_noise: 1,
            seed: 0,
            inpaint: InpaintConfig::default(),
        }
    }
}

/// Models playing the four roles for one target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub main_in: usize,
    pub support_in: usize,
    pub main_out: usize,
    pub support_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: usize,
    pub roles: RoleAssignment,
    pub in_masked: f64,
    pub out_masked: f64,
    pub in_whole: f64,
    pub out_whole: f64,
    /// Correlation with masked distance across IN reconstructions (None
    /// when either side is constant).
    pub pearson_contrastive: Option<f64>,
    pub pearson_main: Option<f64>,
}

impl TargetResult {
    pub fn gap(&self) -> f64 {
        self.out_masked - self.in_masked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintReport {
    pub targets: Vec<TargetResult>,
    pub in_mean: f64,
    pub out_mean: f64,
    /// Targets where the IN distance is strictly smaller.
    pub in_wins: usize,
    /// One-sided sign test of "IN closer", ties dropped.
    pub sign_test_p: f64,
}

/// Picks the four models for `target`: the first IN model as main, the first
/// two OUT models as support and OUT main. All shadows share one step count,
/// so the closest-step rule reduces to ensemble order.
pub fn assign_roles(ensemble: &ShadowEnsemble, target: usize) -> Result<RoleAssignment> {
    let pick = |want: bool| -> Vec<usize> {
        (0..ensemble.len())
            .filter(|&i| ensemble.masks[i][target] == want)
            .collect()
    };
    let (ins, outs) = (pick(true), pick(false));
    if ins.is_empty() || outs.len() < 2 {
        return Err(Error::Config(format!(
            "target {target} needs one IN and two OUT models"
        )));
    }
    let step = ensemble.models[ins[0]].step;
    let mut outs = outs;
    outs.sort_by_key(|&i| ensemble.models[i].step.abs_diff(step));
    Ok(RoleAssignment {
        main_in: ins[0],
        support_in: outs[0],
        main_out: outs[1],
        support_out: outs[0],
    })
}

/// Runs the attack for one target with explicit models.
pub fn evaluate_target(
    models: &[DenoiserModel],
    roles: RoleAssignment,
    s: &NoiseSchedule,
    data: &Dataset,
    target: usize,
    cfg: &InpaintAttackConfig,
) -> Result<TargetResult> {
    if cfg.top_k == 0 || cfg.top_k > cfg.n {
        return Err(Error::Config(format!(
            "top_k {} outside [1, n = {}]",
            cfg.top_k, cfg.n
        )));
    }
    let known = cfg.mask.known(data.shape())?;
    let (x, label) = (data.image(target), data.label(target));
    let loss = LossConfig {
        t: cfg.t,
        n_noise: cfg.n_noise,
        use_flip: false,
        seed: seed::derive(cfg.seed, &[0x5c0, target as u64]),
    };
    let run = |main: usize, support: usize| -> Result<ReconstructionSet> {
        let mut set = generate_reconstructions(
            &models[main],
            s,
            x,
            target,
            label,
            &known,
            cfg.n,
            cfg.seed,
            &cfg.inpaint,
        )?;
        score_contrastive(&mut set, &models[main], &models[support], s, label, &loss)?;
        Ok(set)
    };
    let a = run(roles.main_in, roles.support_in)?;
    let b = run(roles.main_out, roles.support_out)?;
    let (in_masked, in_whole) = a.top_k_distance(cfg.top_k)?;
    let (out_masked, out_whole) = b.top_k_distance(cfg.top_k)?;
    Ok(TargetResult {
        target,
        roles,
        in_masked,
        out_masked,
        in_whole,
        out_whole,
        pearson_contrastive: pearson(&a.score, &a.l2_masked).ok(),
        pearson_main: pearson(&a.main_loss, &a.l2_masked).ok(),
    })
}

/// Attack over `targets`, each against models chosen by [`assign_roles`].
pub fn evaluate_attack(
    ensemble: &ShadowEnsemble,
    s: &NoiseSchedule,
    data: &Dataset,
    targets: &[usize],
    cfg: &InpaintAttackConfig,
) -> Result<InpaintReport> {
    if let Some(&bad) = targets.iter().find(|&&j| j >= data.len()) {
        return Err(Error::Argument(format!(
            "target {bad} outside dataset of {}",
            data.len()
        )));
    }
    let rows = targets
        .iter()
        .map(|&j| {
            evaluate_target(
                &ensemble.models,
                assign_roles(ensemble, j)?,
                s,
                data,
                j,
                cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(rows))
}

pub fn summarize(targets: Vec<TargetResult>) -> InpaintReport {
    let n = targets.len().max(1) as f64;
    let in_wins = targets
        .iter()
        .filter(|r| r.in_masked < r.out_masked)
        .count();
    let decided = targets
        .iter()
        .filter(|r| r.in_masked != r.out_masked)
        .count();
    InpaintReport {
        in_mean: targets.iter().map(|r| r.in_masked).sum::<f64>() / n,
        out_mean: targets.iter().map(|r| r.out_masked).sum::<f64>() / n,
        in_wins,
        sign_test_p: sign_test(in_wins as u64, decided as u64)
            .expect("wins never exceed decided targets"),
        targets,
    }
}

pub fn write_target_rows<W: Write>(out: W, report: &InpaintReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "target",
        "in_masked",
        "out_masked",
        "gap",
        "in_whole",
        "out_whole",
        "main_in",
        "main_out",
        "support",
    ])?;
    for r in &report.targets {
        w.write_record([
            r.target.to_string(),
            format_sig(r.in_masked),
            format_sig(r.out_masked),
            format_sig(r.gap()),
            format_sig(r.in_whole),
            format_sig(r.out_whole),
            r.roles.main_in.to_string(),
            r.roles.main_out.to_string(),
            r.roles.support_in.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
