//! Image distances, the stand-in embedding, nearest-neighbor search and
//! outlier scores. All distances are computed on [0,1] pixels.

mod embed;
mod export;
mod knn;

pub use embed::{cosine_similarity, embed, embed_with, Embedding, EMBED_GRID};
pub use export::{format_sig, write_distance_matrix, write_neighbor_table};
pub use knn::{
    nearest_by, nearest_neighbors, nearest_neighbors_par, outlier_score, Metric, NeighborSet,
};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Sum of squared differences, accumulated in f64.
pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// `sqrt(sum (a_i - b_i)^2 / d)`: 0 for identical images, 1 for all-zeros
/// against all-ones.
pub fn l2_normalized(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(l2_slices(a.pixels(), b.pixels()))
}

pub fn l2_slices(a: &[f32], b: &[f32]) -> f64 {
    (squared_distance(a, b) / a.len() as f64).sqrt()
}

/// Maximum of [`l2_normalized`] over corresponding tiles of a `rows x cols`
/// partition of both images.
pub fn tiled_l2(a: &ImageTensor, b: &ImageTensor, grid: (usize, usize)) -> Result<f64> {
    a.check_same_shape(b)?;
    let s = a.shape();
    let (rows, cols) = grid;
    if rows == 0 || cols == 0 || !s.h.is_multiple_of(rows) || !s.w.is_multiple_of(cols) {
        return Err(Error::Argument(format!(
            "tile grid {rows}x{cols} does not divide a {}x{} image",
            s.h, s.w
        )));
    }
    let (th, tw) = (s.h / rows, s.w / cols);
    let tile_dim = (th * tw * s.c) as f64;
    let row_len = tw * s.c;
    let (pa, pb) = (a.pixels(), b.pixels());
    let mut worst = 0.0f64;
    for ty in 0..rows {
        for tx in 0..cols {
            let mut acc = 0.0;
            for y in ty * th..(ty + 1) * th {
                let start = s.index(y, tx * tw, 0);
                acc += squared_distance(&pa[start..start + row_len], &pb[start..start + row_len]);
            }
            worst = worst.max((acc / tile_dim).sqrt());
        }
    }
    Ok(worst)
}

/// Distance from `xhat` to `x` relative to the mean distance from `xhat` to
/// its training neighborhood: `l2(xhat, x) / (alpha * mean_{y in S} l2(xhat, y))`.
pub fn relative_distance(
    xhat: &ImageTensor,
    x: &ImageTensor,
    neighbors: &NeighborSet,
    alpha: f64,
) -> Result<f64> {
    relative_from_distance(l2_normalized(xhat, x)?, neighbors, alpha)
}

/// [`relative_distance`] with the numerator already computed.
pub fn relative_from_distance(distance: f64, neighbors: &NeighborSet, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if neighbors.is_empty() {
        return Err(Error::Degenerate("empty neighbor set".into()));
    }
    let mean = neighbors.distances.iter().sum::<f64>() / neighbors.len() as f64;
    let denom = alpha * mean;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(
            "neighborhood mean distance is zero".into(),
        ));
    }
    Ok(distance / denom)
}
