//! Seeded synthetic "blob" images for desk experiments: a flat background with
//! a few soft Gaussian spots. Class = quadrant of the first spot.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Provenance};
use crate::image::{ImageTensor, Shape};
use crate::seed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub n: usize,
    pub side: usize,
    pub channels: usize,
    pub classes: u32,
    pub seed: u64,
    /// Amplitude of a smooth random texture added to every blob image (0
    /// disables it). Texture makes images individually memorable.
    pub texture: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n: 512,
            side: 16,
            channels: 1,
            classes: 4,
            seed: 0,
            texture: 0.0,
        }
    }
}

/// A toy set in which some images appear several times.
#[derive(Debug, Clone)]
pub struct PlantedToy {
    pub dataset: Dataset,
    /// Per planted image, the rows holding a copy (ascending).
    pub groups: Vec<Vec<usize>>,
}

pub fn blob_image(shape: Shape, classes: u32, rng: &mut impl Rng) -> (ImageTensor, u32) {
    let Shape { h, w, c } = shape;
    let mut px = vec![0.0f32; shape.dim()];
    let base: Vec<f32> = (0..c).map(|_| rng.random_range(0.15..0.85)).collect();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                px[shape.index(y, x, ch)] = base[ch];
            }
        }
    }
    let spots = rng.random_range(2..=4);
    let mut label = 0;
    for s in 0..spots {
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        if s == 0 {
            let q = (cy >= h as f32 / 2.0) as u32 * 2 + (cx >= w as f32 / 2.0) as u32;
            label = q % classes.max(1);
        }
        let radius = rng.random_range(1.2..3.5) * (h.min(w) as f32 / 16.0);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let amp: Vec<f32> = (0..c).map(|_| sign * rng.random_range(0.25..0.6)).collect();
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                let g = (-d2 / (2.0 * radius * radius)).exp();
                for ch in 0..c {
                    px[shape.index(y, x, ch)] += amp[ch] * g;
                }
            }
        }
    }
    let (img, _) = ImageTensor::clamped(shape, px).expect("shape is consistent");
    (img, label)
}

/// Texture control points per side.
pub const TEXTURE_CELLS: usize = 4;

/// Uniform `[-0.5, 0.5]` values on a `cells x cells` grid (per channel),
/// bilinearly interpolated over the image.
fn smooth_field(shape: Shape, cells: usize, rng: &mut impl Rng) -> Vec<f64> {
    let Shape { h, w, c } = shape;
    let grid: Vec<f64> = (0..cells * cells * c)
        .map(|_| rng.random::<f64>() - 0.5)
        .collect();
    let at = |gy: usize, gx: usize, ch: usize| grid[(gy * cells + gx) * c + ch];
    let coord = |v: usize, n: usize| {
        let p = if n > 1 {
            v as f64 * (cells - 1) as f64 / (n - 1) as f64
        } else {
            0.0
        };
        let i = (p.floor() as usize).min(cells.saturating_sub(2));
        (i, p - i as f64)
    };
    let mut out = vec![0.0; shape.dim()];
    for y in 0..h {
        let (gy, fy) = coord(y, h);
        for x in 0..w {
            let (gx, fx) = coord(x, w);
            for ch in 0..c {
                let (y1, x1) = ((gy + 1).min(cells - 1), (gx + 1).min(cells - 1));
                let top = at(gy, gx, ch) * (1.0 - fx) + at(gy, x1, ch) * fx;
                let bottom = at(y1, gx, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                out[shape.index(y, x, ch)] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// `cfg.n` independent blob images.
pub fn blobs(cfg: &ToyConfig) -> Dataset {
    let shape = Shape::new(cfg.side, cfg.side, cfg.channels);
    let mut rng = seed::rng_for(cfg.seed, &[0x70b]);
    let (mut images, labels): (Vec<_>, Vec<_>) = (0..cfg.n)
        .map(|_| blob_image(shape, cfg.classes, &mut rng))
        .unzip();
    if cfg.texture > 0.0 {
        for (i, img) in images.iter_mut().enumerate() {
            let mut tr = seed::rng_for(cfg.seed, &[0x7e7, i as u64]);
            let field = smooth_field(shape, TEXTURE_CELLS, &mut tr);
            let px = img
                .pixels()
                .iter()
                .zip(&field)
                .map(|(&p, &f)| p + (cfg.texture * f) as f32)
                .collect();
            *img = ImageTensor::clamped(shape, px)
                .expect("shape is consistent")
                .0;
        }
    }
    let source = if cfg.texture > 0.0 {
        format!("toy:blobs(seed={},texture={})", cfg.seed, cfg.texture)
    } else {
        format!("toy:blobs(seed={})", cfg.seed)
    };
    Dataset::new(
        shape,
        images,
        Some(labels),
        Some(cfg.classes),
        Provenance {
            source,
            offsets: (0..cfg.n as u64).collect(),
        },
    )
    .expect("toy data is valid")
}

/// What the duplicated images of a planted toy set look like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    /// Ordinary blob images.
    Blob,
    /// Uniform-noise images: outliers far from every blob image.
    Noise,
}

/// A toy set of exactly `cfg.n` rows in which planted image `j` occurs
/// `counts[j]` times; copies are scattered by a seeded shuffle.
pub fn planted(cfg: &ToyConfig, counts: &[usize], kind: PlantKind) -> PlantedToy {
    let extra: usize = counts.iter().map(|c| c.saturating_sub(1)).sum();
    assert!(
        counts.iter().all(|&c| c >= 1),
        "duplicate counts start at 1"
    );
    assert!(
        extra + counts.len() <= cfg.n,
        "planted copies exceed dataset size"
    );
    let mut unique = blobs(&ToyConfig {
        n: cfg.n - extra,
        ..cfg.clone()
    });
    if kind == PlantKind::Noise {
        let noise = uniform_noise(
            unique.shape(),
            counts.len(),
            seed::derive(cfg.seed, &[0x9a7]),
        );
        let mut images = unique.images().to_vec();
        images[..counts.len()].clone_from_slice(&noise);
        unique = Dataset::new(
            unique.shape(),
            images,
            unique.labels().map(<[u32]>::to_vec),
            unique.num_classes(),
            unique.provenance().clone(),
        )
        .expect("same shape and labels");
    }
    let mut rows: Vec<usize> = (0..unique.len()).collect();
    for (j, &c) in counts.iter().enumerate() {
        rows.extend(std::iter::repeat_n(j, c - 1));
    }
    let mut rng = seed::rng_for(cfg.seed, &[0x5e1]);
    rows.shuffle(&mut rng);
    let groups = (0..counts.len())
        .map(|j| {
            rows.iter()
                .enumerate()
                .filter(|(_, &r)| r == j)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    let mut dataset = unique.select(&rows, &format!("planted{counts:?}"));
    dataset.provenance.source = format!(
        "toy:planted(seed={},counts={counts:?},kind={kind:?})",
        cfg.seed
    );
    PlantedToy { dataset, groups }
}

/// Uniform-noise images, the canary construction.
pub fn uniform_noise(shape: Shape, count: usize, seed: u64) -> Vec<ImageTensor> {
    (0..count)
        .map(|i| {
            let mut rng = seed::rng_for(seed, &[0xca9a, i as u64]);
            let px = (0..shape.dim()).map(|_| rng.random::<f32>()).collect();
            ImageTensor::new(shape, px).expect("uniform draws lie in [0, 1)")
        })
        .collect()
}
