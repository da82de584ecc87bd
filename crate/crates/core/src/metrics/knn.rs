use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{embed, Embedding};
use super::l2_normalized;
use crate::error::{Error, Result};
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    L2,
    /// `1 - cosine` between stand-in embeddings.
    CosineDistance,
}

/// The `k` closest corpus items to a query, ascending by distance with ties
/// broken by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub query: Option<usize>,
    pub ids: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn k(&self) -> usize {
        self.len()
    }
}

fn select(mut scored: Vec<(f64, usize)>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored.into_iter().map(|(d, i)| (i, d)).unzip()
}

/// Exact k-NN by linear scan over `n` items with distance `dist(i)`. Items
/// listed in `exclude` are skipped.
pub fn nearest_by<F>(n: usize, k: usize, exclude: Option<usize>, dist: F) -> Result<NeighborSet>
where
    F: Fn(usize) -> Result<f64>,
{
    let avail = n - exclude.map_or(0, |e| (e < n) as usize);
    check_k(n, avail, k)?;
    let scored = (0..n)
        .filter(|&i| Some(i) != exclude)
        .map(|i| dist(i).map(|d| (d, i)))
        .collect::<Result<Vec<_>>>()?;
    let (ids, distances) = select(scored, k);
    Ok(NeighborSet {
        query: exclude,
        ids,
        distances,
    })
}

fn check_k(n: usize, avail: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("empty corpus".into()));
    }
    if k > avail {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the {avail} available neighbors"
        )));
    }
    Ok(())
}

fn metric_fn<'a>(
    query: &'a ImageTensor,
    corpus: &'a [ImageTensor],
    metric: Metric,
) -> Box<dyn Fn(usize) -> Result<f64> + Sync + 'a> {
    match metric {
        Metric::L2 => Box::new(move |i| l2_normalized(query, &corpus[i])),
        Metric::CosineDistance => {
            let q = embed(query);
            Box::new(move |i| cosine_distance(&q, &embed(&corpus[i])))
        }
    }
}

fn cosine_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    super::cosine_similarity(a, b).map(|c| 1.0 - c)
}

/// Exact k-NN of `query` in `corpus`. Pass the query's own corpus id as
/// `exclude` to drop the self-match.
pub fn nearest_neighbors(
    query: &ImageTensor,
    corpus: &[ImageTensor],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<NeighborSet> {
    let f = metric_fn(query, corpus, metric);
    nearest_by(corpus.len(), k, exclude, f)
}

/// Parallel scan; returns exactly what [`nearest_neighbors`] returns.
pub fn nearest_neighbors_par(
    query: &ImageTensor,
    corpus: &[ImageTensor],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<NeighborSet> {
    let n = corpus.len();
    let avail = n - exclude.map_or(0, |e| (e < n) as usize);
    check_k(n, avail, k)?;
    let f = metric_fn(query, corpus, metric);
    let scored = (0..n)
        .into_par_iter()
        .filter(|&i| Some(i) != exclude)
        .map(|i| f(i).map(|d| (d, i)))
        .collect::<Result<Vec<_>>>()?;
    let (ids, distances) = select(scored, k);
    Ok(NeighborSet {
        query: exclude,
        ids,
        distances,
    })
}

/// Mean Euclidean embedding distance from `x` to its `k` nearest corpus
/// embeddings; larger means more isolated.
pub fn outlier_score(x: &Embedding, corpus: &[Embedding], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    let nn = nearest_by(corpus.len(), k, None, |i| x.euclidean(&corpus[i]))?;
    Ok(nn.distances.iter().sum::<f64>() / k as f64)
}
