use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::model::DenoiserModel;
use crate::diffusion::nn::Arch;
use crate::diffusion::sample::{GenerationRequest, SamplerOptions};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::train::{train, TrainingConfig};
use crate::error::{Error, Result};
use crate::extraction::{generate_batch, untargeted_extraction_scan, ScanConfig, ScanOutcome};
use crate::image::ImageTensor;
use crate::metrics::{cosine_similarity, embed, format_sig, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Removed {
    pub id: usize,
    pub representative: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupResult {
    pub kept: Vec<usize>,
    pub removed: Vec<Removed>,
    pub threshold: f64,
}

impl DedupResult {
    /// The kept rows as a new dataset.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        data.select(&self.kept, &format!("dedup({})", self.threshold))
    }
}

/// Cosine similarity of embeddings; constant images (no embedding direction)
/// are similar only to pixel-identical images.
pub fn similarity(a: &ImageTensor, ea: &Embedding, b: &ImageTensor, eb: &Embedding) -> f64 {
    match (ea.constant, eb.constant) {
        (false, false) => cosine_similarity(ea, eb).expect("non-constant embeddings"),
        (true, true) if a.pixels() == b.pixels() => 1.0,
        _ => 0.0,
    }
}

/// Greedy sweep in ascending id: an image is removed when it is at least
/// `threshold`-similar to an already kept image (its most similar one is
/// recorded, lowest id on ties).
pub fn deduplicate(data: &Dataset, threshold: f64) -> Result<DedupResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "dedup threshold {threshold} outside (0, 1]"
        )));
    }
    let emb: Vec<Embedding> = data.images().par_iter().map(embed).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut removed = Vec::new();
    for i in 0..data.len() {
        let sims: Vec<f64> = kept
            .par_iter()
            .map(|&k| similarity(data.image(i), &emb[i], data.image(k), &emb[k]))
            .collect();
        let best = sims
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= threshold)
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((j, &s)) => removed.push(Removed {
                id: i,
                representative: kept[j],
                similarity: s,
            }),
            None => kept.push(i),
        }
    }
    Ok(DedupResult {
        kept,
        removed,
        threshold,
    })
}

/// Generation and scan settings for one extraction count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionRunConfig {
    pub generations: usize,
    pub seed: u64,
    pub sampler: SamplerOptions,
    pub scan: ScanConfig,
}

impl Default for ExtractionRunConfig {
    fn default() -> Self {
        ExtractionRunConfig {
            generations: 1 << 14,
            seed: 0,
            sampler: SamplerOptions::default(),
            scan: ScanConfig::default(),
        }
    }
}

/// Samples from `m` and scans the generations against `reference`.
pub fn extraction_run(
    m: &DenoiserModel,
    s: &NoiseSchedule,
    reference: &Dataset,
    cfg: &ExtractionRunConfig,
    id: &str,
) -> Result<ScanOutcome> {
    let req = GenerationRequest {
        seed: cfg.seed,
        label: None,
        count: cfg.generations,
    };
    let batch = generate_batch(m, s, &req, &cfg.sampler, id)?;
    untargeted_extraction_scan(&[batch], reference, &cfg.scan)
}

#[derive(Debug, Clone)]
pub struct DedupDefenseOutcome {
    pub dedup: DedupResult,
    pub before: ScanOutcome,
    pub after: ScanOutcome,
}

impl DedupDefenseOutcome {
    /// Unique extractions `(before, after)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.before.extracted.len(), self.after.extracted.len())
    }
}

/// Trains on `data` and on its deduplicated copy with the same seeds, then
/// counts extractions of original training images from each model.
pub fn dedup_defense_experiment(
    data: &Dataset,
    threshold: f64,
    train_cfg: &TrainingConfig,
    arch: &Arch,
    s: &NoiseSchedule,
    cfg: &ExtractionRunConfig,
) -> Result<DedupDefenseOutcome> {
    let dedup = deduplicate(data, threshold)?;
    let clean = dedup.apply(data);
    let before_model = train(data, train_cfg, s, arch)?.model;
    let after_model = train(&clean, train_cfg, s, arch)?.model;
    // both scans match against the original images so counts are comparable
    let before = extraction_run(&before_model, s, data, cfg, "original")?;
    let after = extraction_run(&after_model, s, data, cfg, "deduplicated")?;
    Ok(DedupDefenseOutcome {
        dedup,
        before,
        after,
    })
}

/// One row per input id: `id,kept,representative,similarity`.
pub fn write_dedup<W: Write>(out: W, r: &DedupResult, n: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "kept", "representative", "similarity"])?;
    let mut rows: Vec<(usize, Option<&Removed>)> = r.kept.iter().map(|&k| (k, None)).collect();
    rows.extend(r.removed.iter().map(|x| (x.id, Some(x))));
    rows.sort_by_key(|x| x.0);
    if rows.len() != n {
        return Err(Error::State(format!(
            "dedup result covers {} of {n} ids",
            rows.len()
        )));
    }
    for (id, rem) in rows {
        match rem {
            None => {
                w.write_record([id.to_string(), "true".into(), String::new(), String::new()])?
            }
            Some(x) => w.write_record([
                id.to_string(),
                "false".into(),
                x.representative.to_string(),
                format_sig(x.similarity),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}
