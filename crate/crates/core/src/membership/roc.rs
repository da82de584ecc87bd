use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::format_sig;

/// Scores of one attack: higher means more member-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScoreSet {
    pub attack: String,
    pub t: usize,
    pub n_noise: usize,
    pub use_flip: bool,
    /// `(target model, example)` per score.
    pub targets: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl AttackScoreSet {
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() || self.scores.len() != self.targets.len() {
            return Err(Error::shape(
                self.scores.len(),
                self.labels.len().min(self.targets.len()),
            ));
        }
        if let Some(s) = self.scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Degenerate(format!("non-finite attack score {s}")));
        }
        Ok(())
    }

    pub fn roc(&self) -> Result<Roc> {
        roc_curve(&self.scores, &self.labels)
    }
}

/// Empirical ROC: points ordered by decreasing threshold, starting at (0, 0).
/// Point `i` predicts "member" for every score `>= thresholds[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Degenerate("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "ROC needs both members and non-members".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut roc = Roc {
        thresholds: vec![f64::INFINITY],
        fpr: vec![0.0],
        tpr: vec![0.0],
        positives: pos,
        negatives: neg,
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = scores[order[i]];
        while i < order.len() && scores[order[i]] == thr {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.thresholds.push(thr);
        roc.fpr.push(fp as f64 / neg as f64);
        roc.tpr.push(tp as f64 / pos as f64);
    }
    Ok(roc)
}

/// Highest TPR among operating points whose FPR does not exceed `fpr`.
pub fn tpr_at_fpr(roc: &Roc, fpr: f64) -> f64 {
    roc.fpr
        .iter()
        .zip(&roc.tpr)
        .filter(|(f, _)| **f <= fpr + 1e-12)
        .map(|(_, t)| *t)
        .fold(0.0, f64::max)
}

/// Area under the curve; tied scores count one half.
pub fn auc(roc: &Roc) -> f64 {
    roc.fpr
        .windows(2)
        .zip(roc.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum()
}

/// `(fpr, tpr_at_fpr)` on `bins` log-spaced FPR values from `1 / negatives` to 1.
pub fn loglog_bins(roc: &Roc, bins: usize) -> Vec<(f64, f64)> {
    let lo = (1.0 / roc.negatives as f64).ln();
    (0..bins)
        .map(|i| {
            let f = if bins == 1 {
                1.0
            } else {
                (lo * (1.0 - i as f64 / (bins - 1) as f64)).exp()
            };
            (f, tpr_at_fpr(roc, f))
        })
        .collect()
}

/// "member" iff `loss < tau`.
pub fn loss_threshold_attack(losses: &[f64], tau: f64) -> Vec<bool> {
    losses.iter().map(|&l| l < tau).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMetric {
    Accuracy,
    /// Largest TPR whose FPR stays within the bound.
    TprAtFpr(f64),
}

/// Threshold for `loss_threshold_attack` maximizing `metric` on labelled
/// calibration losses. Candidates sit midway between consecutive distinct
/// losses (plus both extremes); ties keep the smallest tau.
pub fn select_tau(losses: &[f64], labels: &[bool], metric: TauMetric) -> Result<f64> {
    if losses.len() != labels.len() || losses.is_empty() {
        return Err(Error::Argument(
            "calibration set must be non-empty with one label per loss".into(),
        ));
    }
    let mut sorted: Vec<f64> = losses.to_vec();
    if sorted.iter().any(|l| l.is_nan()) {
        return Err(Error::Degenerate("NaN loss".into()));
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(sorted.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(f64::INFINITY);
    let pos = labels.iter().filter(|&&l| l).count().max(1) as f64;
    let neg = labels.iter().filter(|&&l| !l).count().max(1) as f64;
    let value = |tau: f64| {
        let pred = loss_threshold_attack(losses, tau);
        let tp = pred.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
        let fp = pred.iter().zip(labels).filter(|(p, l)| **p && !**l).count() as f64;
        match metric {
            TauMetric::Accuracy => (tp + neg - fp) / (pos + neg),
            TauMetric::TprAtFpr(bound) if fp / neg <= bound + 1e-12 => tp / pos,
            TauMetric::TprAtFpr(_) => f64::NEG_INFINITY,
        }
    };
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &tau in &candidates {
        let v = value(tau);
        if v > best.0 {
            best = (v, tau);
        }
    }
    Ok(best.1)
}

pub fn write_scores<W: Write>(out: W, set: &AttackScoreSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "attack", "t", "n_noise", "use_flip", "model", "example", "score", "member",
    ])?;
    for ((&(model, ex), &s), &l) in set.targets.iter().zip(&set.scores).zip(&set.labels) {
        w.write_record([
            set.attack.clone(),
            set.t.to_string(),
            set.n_noise.to_string(),
            set.use_flip.to_string(),
            model.to_string(),
            ex.to_string(),
            format_sig(s),
            l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_roc<W: Write>(out: W, roc: &Roc) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "fpr", "tpr"])?;
    for i in 0..roc.fpr.len() {
        w.write_record([
            format_sig(roc.thresholds[i]),
            format_sig(roc.fpr[i]),
            format_sig(roc.tpr[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}
