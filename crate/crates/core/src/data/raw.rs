//! Raw tensor files: little-endian `f32` data of shape `(N, H, W, C)` plus a
//! JSON manifest declaring the shape, labels and provenance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    pub format_version: u32,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    #[serde(default)]
    pub labels: Option<Vec<u32>>,
    #[serde(default)]
    pub num_classes: Option<u32>,
    pub provenance: Provenance,
}

/// Result of ingesting a raw tensor file.
#[derive(Debug)]
pub struct RawIngest {
    pub dataset: Dataset,
    /// Pixels that were outside `[0, 1]` and got clamped.
    pub clamped: usize,
}

pub fn export_raw(ds: &Dataset, tensor: &Path, manifest: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(ds.len() * ds.shape().dim() * 4);
    for img in ds.images() {
        for p in img.pixels() {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
    }
    std::fs::write(tensor, bytes)?;
    let s = ds.shape();
    let m = RawManifest {
        format_version: FORMAT_VERSION,
        n: ds.len(),
        h: s.h,
        w: s.w,
        c: s.c,
        labels: ds.labels().map(|l| l.to_vec()),
        num_classes: ds.num_classes(),
        provenance: ds.provenance().clone(),
    };
    std::fs::write(manifest, serde_json::to_vec_pretty(&m)?)?;
    Ok(())
}

pub fn ingest_raw(tensor: &Path, manifest: &Path) -> Result<RawIngest> {
    let m: RawManifest = serde_json::from_slice(&std::fs::read(manifest)?)?;
    let bytes = std::fs::read(tensor)?;
    let r = decode_raw(&m, &bytes)?;
    if r.clamped > 0 {
        log::warn!(
            "{}: clamped {} pixels into [0, 1]",
            tensor.display(),
            r.clamped
        );
    }
    Ok(r)
}

pub fn decode_raw(m: &RawManifest, bytes: &[u8]) -> Result<RawIngest> {
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!("unsupported raw format version {}", m.format_version),
        });
    }
    let shape = Shape::new(m.h, m.w, m.c);
    let expected = m.n * shape.dim() * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected) as u64,
            message: format!(
                "manifest declares {} images of {shape} ({expected} bytes) but file holds {} bytes",
                m.n,
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(m.n);
    let mut clamped = 0;
    for chunk in bytes.chunks_exact((shape.dim() * 4).max(1)).take(m.n) {
        let px: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let (img, n) = ImageTensor::clamped(shape, px)?;
        clamped += n;
        images.push(img);
    }
    let dataset = Dataset::new(
        shape,
        images,
        m.labels.clone(),
        m.num_classes,
        m.provenance.clone(),
    )?;
    Ok(RawIngest { dataset, clamped })
}
