use serde::{Deserialize, Serialize};

use super::loss::{example_losses, loss_matrix, LossConfig};
use super::roc::{tpr_at_fpr, AttackScoreSet};
use super::shadow::ShadowEnsemble;
use crate::data::Dataset;
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Gaussian fits to one example's losses under IN and OUT reference models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiraStats {
    pub in_losses: Vec<f64>,
    pub out_losses: Vec<f64>,
    pub mu_in: f64,
    pub sigma_in: f64,
    pub mu_out: f64,
    pub sigma_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Each example keeps its own IN and OUT deviations.
    #[default]
    PerExample,
    /// One IN and one OUT deviation pooled across all scored examples.
    Global,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq(v: &[f64], mu: f64) -> f64 {
    v.iter().map(|x| (x - mu) * (x - mu)).sum()
}

/// Fits both Gaussians. A side with fewer than two samples borrows the pooled
/// within-side deviation; every deviation is floored at `VARIANCE_FLOOR`.
pub fn fit_stats(in_losses: &[f64], out_losses: &[f64]) -> Result<LiraStats> {
    if in_losses.is_empty() || out_losses.is_empty() {
        return Err(Error::Degenerate("LiRA needs IN and OUT losses".into()));
    }
    if in_losses.iter().chain(out_losses).any(|l| !l.is_finite()) {
        return Err(Error::Degenerate("non-finite reference loss".into()));
    }
    let (mu_in, mu_out) = (mean(in_losses), mean(out_losses));
    let (ss_in, ss_out) = (sum_sq(in_losses, mu_in), sum_sq(out_losses, mu_out));
    let dof = (in_losses.len() + out_losses.len()).saturating_sub(2);
    let pooled = if dof > 0 {
        ((ss_in + ss_out) / dof as f64).sqrt()
    } else {
        0.0
    };
    let side = |ss: f64, n: usize| {
        if n >= 2 {
            (ss / (n - 1) as f64).sqrt()
        } else {
            pooled
        }
    };
    Ok(LiraStats {
        in_losses: in_losses.to_vec(),
        out_losses: out_losses.to_vec(),
        mu_in,
        sigma_in: side(ss_in, in_losses.len()).max(VARIANCE_FLOOR),
        mu_out,
        sigma_out: side(ss_out, out_losses.len()).max(VARIANCE_FLOOR),
    })
}

pub fn normal_log_density(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln() - 0.5 * z * z
}

/// `log p_in(l) - log p_out(l)`; positive leans member.
pub fn lira_score(l_star: f64, stats: &LiraStats) -> Result<f64> {
    for s in [stats.sigma_in, stats.sigma_out] {
        if !(s.is_finite() && s >= VARIANCE_FLOOR) {
            return Err(Error::Degenerate(format!(
                "Gaussian deviation {s} below floor"
            )));
        }
    }
    if !l_star.is_finite() {
        return Err(Error::Degenerate(format!(
            "non-finite target loss {l_star}"
        )));
    }
    let z_in = (l_star - stats.mu_in) / stats.sigma_in;
    let z_out = (l_star - stats.mu_out) / stats.sigma_out;
    Ok((stats.sigma_out / stats.sigma_in).ln() - 0.5 * (z_in * z_in - z_out * z_out))
}

/// Scores `target[k]` against references `refs[m][k]` with memberships `masks[m][k]`.
pub fn lira_scores(
    refs: &[Vec<f64>],
    masks: &[Vec<bool>],
    target: &[f64],
    mode: VarianceMode,
) -> Result<Vec<f64>> {
    let mut stats = Vec::with_capacity(target.len());
    for k in 0..target.len() {
        let pick = |want: bool| -> Vec<f64> {
            refs.iter()
                .zip(masks)
                .filter(|(_, m)| m[k] == want)
                .map(|(r, _)| r[k])
                .collect()
        };
        let (i, o) = (pick(true), pick(false));
        if i.is_empty() || o.is_empty() {
            return Err(Error::Config(format!(
                "reference models do not cover example position {k} on both sides"
            )));
        }
        stats.push(fit_stats(&i, &o)?);
    }
    if mode == VarianceMode::Global {
        let pool = |side: fn(&LiraStats) -> (&[f64], f64)| {
            let (mut ss, mut dof) = (0.0, 0usize);
            for st in &stats {
                let (v, mu) = side(st);
                ss += sum_sq(v, mu);
                dof += v.len() - 1;
            }
            if dof > 0 {
                (ss / dof as f64).sqrt().max(VARIANCE_FLOOR)
            } else {
                VARIANCE_FLOOR
            }
        };
        let s_in = pool(|s| (&s.in_losses, s.mu_in));
        let s_out = pool(|s| (&s.out_losses, s.mu_out));
        for st in &mut stats {
            st.sigma_in = s_in;
            st.sigma_out = s_out;
        }
    }
    stats
        .iter()
        .zip(target)
        .map(|(st, &l)| lira_score(l, st))
        .collect()
}

fn column_masks(ensemble: &ShadowEnsemble, examples: &[usize]) -> Vec<Vec<bool>> {
    ensemble
        .masks
        .iter()
        .map(|m| examples.iter().map(|&j| m[j]).collect())
        .collect()
}

fn check_examples(ensemble: &ShadowEnsemble, data: &Dataset, examples: &[usize]) -> Result<()> {
    if ensemble.masks.iter().any(|m| m.len() != data.len()) {
        return Err(Error::Config(
            "ensemble masks do not match the dataset size".into(),
        ));
    }
    if let Some(&bad) = examples.iter().find(|&&j| j >= data.len()) {
        return Err(Error::Argument(format!(
            "example {bad} outside dataset of {}",
            data.len()
        )));
    }
    Ok(())
}

/// LiRA against an external target whose membership over `data` is `target_mask`.
/// Score targets are recorded as model index `ensemble.len()`.
#[allow(clippy::too_many_arguments)]
pub fn run_lira(
    ensemble: &ShadowEnsemble,
    target: &DenoiserModel,
    target_mask: &[bool],
    s: &NoiseSchedule,
    data: &Dataset,
    examples: &[usize],
    cfg: &LossConfig,
    mode: VarianceMode,
) -> Result<AttackScoreSet> {
    check_examples(ensemble, data, examples)?;
    if target_mask.len() != data.len() {
        return Err(Error::shape(data.len(), target_mask.len()));
    }
    let refs = loss_matrix(&ensemble.models, s, data, examples, cfg)?;
    let tl = example_losses(target, s, data, examples, cfg)?;
    let scores = lira_scores(&refs, &column_masks(ensemble, examples), &tl, mode)?;
    Ok(AttackScoreSet {
        attack: "lira".into(),
        t: cfg.t,
        n_noise: cfg.n_noise,
        use_flip: cfg.use_flip,
        targets: examples.iter().map(|&j| (ensemble.len(), j)).collect(),
        scores,
        labels: examples.iter().map(|&j| target_mask[j]).collect(),
    })
}

/// Every shadow model in turn plays the target against the remaining ones;
/// all `(model, example)` scores are pooled.
pub fn leave_one_out(
    ensemble: &ShadowEnsemble,
    s: &NoiseSchedule,
    data: &Dataset,
    examples: &[usize],
    cfg: &LossConfig,
    mode: VarianceMode,
) -> Result<AttackScoreSet> {
    check_examples(ensemble, data, examples)?;
    let losses = loss_matrix(&ensemble.models, s, data, examples, cfg)?;
    leave_one_out_from_losses(
        &losses,
        &column_masks(ensemble, examples),
        examples,
        cfg,
        mode,
    )
}

/// [`leave_one_out`] over precomputed losses `losses[model][k]` and masks `masks[model][k]`.
pub fn leave_one_out_from_losses(
    losses: &[Vec<f64>],
    masks: &[Vec<bool>],
    examples: &[usize],
    cfg: &LossConfig,
    mode: VarianceMode,
) -> Result<AttackScoreSet> {
    if losses.len() < 3 {
        return Err(Error::Config(
            "leave-one-out LiRA needs at least three models".into(),
        ));
    }
    let mut set = AttackScoreSet {
        attack: "lira-loo".into(),
        t: cfg.t,
        n_noise: cfg.n_noise,
        use_flip: cfg.use_flip,
        targets: Vec::new(),
        scores: Vec::new(),
        labels: Vec::new(),
    };
    for i in 0..losses.len() {
        let others: Vec<usize> = (0..losses.len()).filter(|&m| m != i).collect();
        let refs: Vec<Vec<f64>> = others.iter().map(|&m| losses[m].clone()).collect();
        let rmasks: Vec<Vec<bool>> = others.iter().map(|&m| masks[m].clone()).collect();
        set.scores
            .extend(lira_scores(&refs, &rmasks, &losses[i], mode)?);
        set.labels.extend(masks[i].iter().copied());
        set.targets.extend(examples.iter().map(|&j| (i, j)));
    }
    Ok(set)
}

/// Leave-one-out TPR at `fpr` for each timestep in `t_list`.
#[allow(clippy::too_many_arguments)]
pub fn timestep_sweep(
    ensemble: &ShadowEnsemble,
    s: &NoiseSchedule,
    data: &Dataset,
    examples: &[usize],
    t_list: &[usize],
    cfg: &LossConfig,
    fpr: f64,
    mode: VarianceMode,
) -> Result<Vec<(usize, f64)>> {
    if let Some(&bad) = t_list.iter().find(|&&t| t == 0 || t > s.steps()) {
        return Err(Error::Config(format!(
            "timestep {bad} outside [1, {}]",
            s.steps()
        )));
    }
    t_list
        .iter()
        .map(|&t| {
            let set = leave_one_out(ensemble, s, data, examples, &LossConfig { t, ..*cfg }, mode)?;
            Ok((t, tpr_at_fpr(&set.roc()?, fpr)))
        })
        .collect()
}
