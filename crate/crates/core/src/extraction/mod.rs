//! Generate-and-filter extraction: clique detection over generation batches,
//! matching generations to training images, eidetic counts, the untargeted
//! relative-distance scan and precision–recall reporting.

pub mod clique;
mod scan;

pub use scan::{
    calibrate_score_cutoff, extraction_frequency, precision_recall, untargeted_extraction_scan,
    write_precision_recall, write_records, ExtractionRecord, PrPoint, ScanConfig, ScanOutcome,
    Verdict,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffusion::sample::{sample_with, GenerationRequest, SamplerOptions};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{l2_normalized, tiled_l2};
use clique::{max_clique, Bits};

/// Samples `req.count` images; generation `i` is recorded with seed `i`.
pub fn generate_batch<P: NoisePredictor + ?Sized>(
    m: &P,
    s: &crate::diffusion::schedule::NoiseSchedule,
    req: &GenerationRequest,
    opts: &SamplerOptions,
    model_id: &str,
) -> Result<GenerationBatch> {
    let images = sample_with(m, s, req, opts)?;
    GenerationBatch::new(images, (0..req.count as u64).collect(), req.label, model_id)
}

/// Generations from one model under one label, each with its own seed.
#[derive(Debug, Clone)]
pub struct GenerationBatch {
    pub images: Vec<ImageTensor>,
    pub seeds: Vec<u64>,
    pub label: Option<u32>,
    pub model_id: String,
}

impl GenerationBatch {
    pub fn new(
        images: Vec<ImageTensor>,
        seeds: Vec<u64>,
        label: Option<u32>,
        model_id: &str,
    ) -> Result<Self> {
        if images.len() != seeds.len() {
            return Err(Error::shape(images.len(), seeds.len()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("generation seeds must be distinct".into()));
        }
        Ok(GenerationBatch {
            images,
            seeds,
            label,
            model_id: model_id.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub nodes: usize,
    /// `(i, j, tiled distance)` with `i < j`, in ascending `(i, j)` order.
    pub edges: Vec<(usize, usize, f64)>,
    pub threshold: f64,
    pub grid: (usize, usize),
}

impl SimilarityGraph {
    pub fn adjacency(&self) -> Vec<Bits> {
        let mut adj = vec![Bits::empty(self.nodes); self.nodes];
        for &(i, j, _) in &self.edges {
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj
    }
}

/// Tiled distances of every pair `i < j`, row-major over the upper triangle.
pub fn pairwise_tiled(images: &[ImageTensor], grid: (usize, usize)) -> Result<Vec<f64>> {
    let n = images.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| tiled_l2(&images[i], &images[j], grid))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

pub fn build_similarity_graph(
    images: &[ImageTensor],
    threshold: f64,
    grid: (usize, usize),
) -> Result<SimilarityGraph> {
    if !(threshold > 0.0) {
        return Err(Error::Argument(format!(
            "edge threshold must be positive, got {threshold}"
        )));
    }
    let n = images.len();
    let dist = pairwise_tiled(images, grid)?;
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if dist[k] <= threshold {
                edges.push((i, j, dist[k]));
            }
            k += 1;
        }
    }
    Ok(SimilarityGraph {
        nodes: n,
        edges,
        threshold,
        grid,
    })
}

/// Edge threshold at the given quantile of the pairwise tiled distances of a
/// calibration batch (default use: 0.001, the 0.1th percentile).
pub fn calibrate_edge_threshold(
    images: &[ImageTensor],
    grid: (usize, usize),
    quantile: f64,
) -> Result<f64> {
    let mut d = pairwise_tiled(images, grid)?;
    if d.is_empty() {
        return Err(Error::Degenerate(
            "calibration needs at least two images".into(),
        ));
    }
    d.sort_by(f64::total_cmp);
    let idx = ((quantile.clamp(0.0, 1.0) * (d.len() - 1) as f64).floor() as usize).min(d.len() - 1);
    Ok(d[idx])
}

/// A clique of near-identical generations taken as evidence of a memorized image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizedClique {
    pub members: Vec<usize>,
    /// Member with the smallest summed distance to the others (lowest id on ties).
    pub representative: usize,
    pub mean_distance: f64,
    pub exact: bool,
}

pub fn flag_memorized(
    images: &[ImageTensor],
    threshold: f64,
    grid: (usize, usize),
    clique_min: usize,
) -> Result<Option<MemorizedClique>> {
    if clique_min < 2 {
        return Err(Error::Argument("clique_min must be at least 2".into()));
    }
    let g = build_similarity_graph(images, threshold, grid)?;
    flag_in_graph(&g, clique_min)
}

/// [`flag_memorized`] on an already built graph.
pub fn flag_in_graph(g: &SimilarityGraph, clique_min: usize) -> Result<Option<MemorizedClique>> {
    let c = max_clique(&g.adjacency());
    if c.nodes.len() < clique_min {
        return Ok(None);
    }
    let mut dist = std::collections::HashMap::new();
    for &(i, j, d) in &g.edges {
        dist.insert((i, j), d);
    }
    let pair = |a: usize, b: usize| dist[&(a.min(b), a.max(b))];
    let m = &c.nodes;
    let mut total = 0.0;
    let mut best = (f64::INFINITY, m[0]);
    for &a in m {
        let s: f64 = m.iter().filter(|&&b| b != a).map(|&b| pair(a, b)).sum();
        total += s;
        if s < best.0 {
            best = (s, a);
        }
    }
    let pairs = (m.len() * (m.len() - 1)) as f64;
    Ok(Some(MemorizedClique {
        members: c.nodes.clone(),
        representative: best.1,
        mean_distance: total / pairs,
        exact: c.exact,
    }))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Nearest training image and its distance, when that distance is at most
/// `delta`. Ties go to the lowest id.
pub fn match_to_training(
    xhat: &ImageTensor,
    train: &Dataset,
    delta: f64,
) -> Result<Option<(usize, f64)>> {
    check_delta(delta)?;
    if train.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, x) in train.images().iter().enumerate() {
        let d = l2_normalized(xhat, x)?;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok((best.0 <= delta).then_some((best.1, best.0)))
}

/// Number of training images within `delta` of `x`, counting `x` itself when
/// it is a training image.
pub fn eidetic_count(x: &ImageTensor, train: &Dataset, delta: f64) -> Result<usize> {
    check_delta(delta)?;
    let mut k = 0;
    for y in train.images() {
        if l2_normalized(x, y)? <= delta {
            k += 1;
        }
    }
    Ok(k)
}
