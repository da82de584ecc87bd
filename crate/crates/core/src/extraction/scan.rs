use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GenerationBatch;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{format_sig, l2_slices, relative_from_distance, NeighborSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub alpha: f64,
    /// Neighborhood size for the relative distance.
    pub n: usize,
    /// A generation is extracted when its relative distance is at most this.
    pub score_cutoff: f64,
    /// Absolute ℓ2 bound a verdict must also satisfy.
    pub delta: f64,
    /// Radius under which two training images count as duplicates of each other.
    pub eidetic_delta: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            alpha: 0.5,
            n: 50,
            score_cutoff: 1.0,
            delta: 0.15,
            eidetic_delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Extracted,
    NotExtracted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub model_id: String,
    pub label: Option<u32>,
    pub seed: u64,
    /// Position of the generation in the scan input (batches concatenated).
    pub generation: usize,
    /// Nearest training image; exact training duplicates map to their lowest id.
    pub matched: Option<usize>,
    pub distance: f64,
    /// Relative distance, absent when it could not be computed.
    pub score: Option<f64>,
    pub clique_size: Option<usize>,
    pub verdict: Verdict,
    /// Training images within the eidetic radius of the match.
    pub eidetic_k: Option<usize>,
    pub error: Option<String>,
}

impl ExtractionRecord {
    fn order_key(&self) -> (u64, &str, Option<u32>, usize) {
        (self.seed, &self.model_id, self.label, self.generation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    /// One record per generation, in input order.
    pub records: Vec<ExtractionRecord>,
    /// One record per extracted training image (the first generation that hit
    /// it), ascending by score. Training images within the eidetic radius of
    /// an image already listed are not listed again.
    pub extracted: Vec<ExtractionRecord>,
}

/// Lowest id holding each distinct pixel array.
fn distinct_rows(train: &Dataset) -> Vec<usize> {
    let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut reps = Vec::new();
    for (i, img) in train.images().iter().enumerate() {
        let key: Vec<u32> = img.pixels().iter().map(|p| p.to_bits()).collect();
        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
            e.insert(i);
            reps.push(i);
        }
    }
    reps
}

/// Cutoff at the `quantile` of relative-distance scores of held-out images
/// from the data distribution (lower empirical quantile; 0 is the minimum).
pub fn calibrate_score_cutoff(reference_scores: &[f64], quantile: f64) -> Result<f64> {
    if reference_scores.is_empty() || !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Argument(
            "calibration needs reference scores and a quantile in [0, 1]".into(),
        ));
    }
    let mut v = reference_scores.to_vec();
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Degenerate("NaN reference score".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v[((quantile * v.len() as f64).floor() as usize).min(v.len() - 1)])
}

/// Scores every generation against its nearest training image by relative
/// distance. Neighborhoods are taken over distinct training images, so exact
/// training duplicates do not crowd the neighborhood of their own copies.
pub fn untargeted_extraction_scan(
    batches: &[GenerationBatch],
    train: &Dataset,
    cfg: &ScanConfig,
) -> Result<ScanOutcome> {
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    if cfg.n == 0 || !(cfg.alpha > 0.0) {
        return Err(Error::Config("scan needs n >= 1 and alpha > 0".into()));
    }
    let reps = distinct_rows(train);
    let k = cfg.n.min(reps.len());
    let items: Vec<(&GenerationBatch, u64, &crate::image::ImageTensor)> = batches
        .iter()
        .flat_map(|b| {
            b.seeds
                .iter()
                .zip(&b.images)
                .map(move |(&s, img)| (b, s, img))
        })
        .collect();
    let shape = train.shape();
    if let Some((_, _, bad)) = items.iter().find(|(_, _, img)| img.shape() != shape) {
        return Err(Error::shape(shape, bad.shape()));
    }

    let records: Vec<ExtractionRecord> = items
        .par_iter()
        .enumerate()
        .map(|(g, &(batch, seed, img))| {
            let mut scored: Vec<(f64, usize)> = reps
                .iter()
                .map(|&r| (l2_slices(img.pixels(), train.image(r).pixels()), r))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < scored.len() {
                scored.select_nth_unstable_by(k, cmp);
                scored.truncate(k);
            }
            scored.sort_by(cmp);
            let (distance, matched) = scored[0];
            let nn = NeighborSet {
                query: None,
                ids: scored.iter().map(|s| s.1).collect(),
                distances: scored.iter().map(|s| s.0).collect(),
            };
            let (score, error) = match relative_from_distance(distance, &nn, cfg.alpha) {
                Ok(s) => (Some(s), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let hit = score.is_some_and(|s| s <= cfg.score_cutoff) && distance <= cfg.delta;
            ExtractionRecord {
                model_id: batch.model_id.clone(),
                label: batch.label,
                seed,
                generation: g,
                matched: Some(matched),
                distance,
                score,
                clique_size: None,
                verdict: if hit {
                    Verdict::Extracted
                } else {
                    Verdict::NotExtracted
                },
                eidetic_k: None,
                error,
            }
        })
        .collect();

    // First generation per matched training image.
    let mut first: HashMap<usize, &ExtractionRecord> = HashMap::new();
    for r in records.iter().filter(|r| r.verdict == Verdict::Extracted) {
        let m = r.matched.expect("extracted records carry a match");
        let e = first.entry(m).or_insert(r);
        if r.order_key() < e.order_key() {
            *e = r;
        }
    }
    let mut candidates: Vec<&ExtractionRecord> = first.into_values().collect();
    candidates.sort_by(|a, b| {
        a.score
            .unwrap_or(f64::INFINITY)
            .total_cmp(&b.score.unwrap_or(f64::INFINITY))
            .then(a.matched.cmp(&b.matched))
    });
    let mut extracted: Vec<ExtractionRecord> = Vec::new();
    for c in candidates {
        let img = train.image(c.matched.expect("present"));
        let near_listed = extracted.iter().any(|e| {
            l2_slices(
                img.pixels(),
                train.image(e.matched.expect("present")).pixels(),
            ) <= cfg.eidetic_delta
        });
        if near_listed {
            continue;
        }
        let k = train
            .images()
            .iter()
            .filter(|y| l2_slices(img.pixels(), y.pixels()) <= cfg.eidetic_delta)
            .count();
        extracted.push(ExtractionRecord {
            eidetic_k: Some(k),
            ..c.clone()
        });
    }
    Ok(ScanOutcome { records, extracted })
}

/// Number of extracted generations matched to each training id.
pub fn extraction_frequency(records: &[ExtractionRecord], train_len: usize) -> Vec<usize> {
    let mut f = vec![0; train_len];
    for r in records.iter().filter(|r| r.verdict == Verdict::Extracted) {
        if let Some(m) = r.matched.filter(|&m| m < train_len) {
            f[m] += 1;
        }
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub rank: usize,
    pub score: f64,
    pub precision: f64,
    pub extracted_count: usize,
}

/// Precision and number of true extractions at every prefix of a ranked list.
pub fn precision_recall(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    if scores.len() != labels.len() {
        return Err(Error::shape(scores.len(), labels.len()));
    }
    if !labels.contains(&true) {
        return Err(Error::Degenerate(
            "precision-recall needs at least one positive".into(),
        ));
    }
    let mut hits = 0;
    Ok(scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &pos))| {
            hits += pos as usize;
            PrPoint {
                rank: i + 1,
                score,
                precision: hits as f64 / (i + 1) as f64,
                extracted_count: hits,
            }
        })
        .collect())
}

pub fn write_precision_recall<W: Write>(out: W, curve: &[PrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "score", "precision", "extracted_count"])?;
    for p in curve {
        w.write_record([
            p.rank.to_string(),
            format_sig(p.score),
            format_sig(p.precision),
            p.extracted_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records<W: Write>(out: W, records: &[ExtractionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "generation",
        "model_id",
        "label",
        "seed",
        "matched",
        "distance",
        "score",
        "clique_size",
        "verdict",
        "eidetic_k",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in records {
        w.write_record([
            r.generation.to_string(),
            r.model_id.clone(),
            opt(r.label.map(|l| l.to_string())),
            r.seed.to_string(),
            opt(r.matched.map(|m| m.to_string())),
            format_sig(r.distance),
            opt(r.score.map(format_sig)),
            opt(r.clique_size.map(|c| c.to_string())),
            match r.verdict {
                Verdict::Extracted => "extracted".into(),
                Verdict::NotExtracted => "not-extracted".into(),
            },
            opt(r.eidetic_k.map(|k| k.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}
