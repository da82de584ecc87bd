use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Side of the downsampling grid; the embedding has `EMBED_GRID^2` entries.
pub const EMBED_GRID: usize = 8;

/// Stand-in for a learned image embedding: normalized, mean-free, downsampled
/// luminance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vec: Vec<f64>,
    /// Set when the source image had no luminance variation; `vec` is zero.
    pub constant: bool,
}

impl Embedding {
    pub fn from_vec(vec: Vec<f64>) -> Self {
        let constant = vec.iter().all(|&v| v == 0.0);
        Embedding { vec, constant }
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn euclidean(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::shape(self.dim(), other.dim()));
        }
        Ok(self
            .vec
            .iter()
            .zip(&other.vec)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

pub fn embed(x: &ImageTensor) -> Embedding {
    embed_with(x, EMBED_GRID)
}

fn luminance(x: &ImageTensor) -> Vec<f64> {
    let s = x.shape();
    x.pixels()
        .chunks_exact(s.c)
        .map(|p| match p {
            [v] => *v as f64,
            [r, g, b] => 0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64,
            _ => p.iter().map(|&v| v as f64).sum::<f64>() / p.len() as f64,
        })
        .collect()
}

/// Overlap of source cell `i` (width 1) with target cell `j` (width
/// `src / dst` in source units).
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|j| {
            let (lo, hi) = (j as f64 * scale, (j + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// Embedding over a `grid x grid` area downsample. Images smaller than the
/// grid are upsampled by the same area rule.
pub fn embed_with(x: &ImageTensor, grid: usize) -> Embedding {
    let s = x.shape();
    let lum = luminance(x);
    let wy = overlap_weights(s.h, grid);
    let wx = overlap_weights(s.w, grid);
    let mut v = vec![0.0f64; grid * grid];
    for (gy, rows) in wy.iter().enumerate() {
        for (gx, cols) in wx.iter().enumerate() {
            let mut acc = 0.0;
            for &(y, a) in rows {
                for &(xx, b) in cols {
                    acc += a * b * lum[y * s.w + xx];
                }
            }
            v[gy * grid + gx] = acc;
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|e| *e -= mean);
    let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return Embedding {
            vec: vec![0.0; grid * grid],
            constant: true,
        };
    }
    v.iter_mut().for_each(|e| *e /= norm);
    Embedding {
        vec: v,
        constant: false,
    }
}

pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::shape(u.dim(), v.dim()));
    }
    let dot: f64 = u.vec.iter().zip(&v.vec).map(|(a, b)| a * b).sum();
    let nu = u.vec.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.vec.iter().map(|a| a * a).sum::<f64>().sqrt();
    if u.constant || v.constant || nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}
