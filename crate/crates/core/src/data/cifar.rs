//! CIFAR-10 binary batches: records of one label byte followed by 3072 pixel
//! bytes, 32×32 row-major with the red plane first, then green, then blue.

use std::path::Path;

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};

pub const SIDE: usize = 32;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD: usize = 1 + 3 * PLANE;
pub const CLASSES: u32 = 10;
pub const SHAPE: Shape = Shape::new(SIDE, SIDE, 3);

/// Reads and concatenates CIFAR-10 batch files, preserving record order.
pub fn ingest_cifar10<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut offsets = Vec::new();
    let mut sources = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.is_empty() {
            log::warn!("{}: empty CIFAR-10 file", path.display());
        }
        let (imgs, labs) = decode_records(&bytes)?;
        offsets.extend((0..imgs.len()).map(|i| (i * RECORD) as u64));
        images.extend(imgs);
        labels.extend(labs);
        sources.push(path.display().to_string());
    }
    Dataset::new(
        SHAPE,
        images,
        Some(labels),
        Some(CLASSES),
        Provenance {
            source: format!("cifar10:{}", sources.join(",")),
            offsets,
        },
    )
}

/// Decodes an in-memory batch.
pub fn decode_records(bytes: &[u8]) -> Result<(Vec<ImageTensor>, Vec<u32>)> {
    if !bytes.len().is_multiple_of(RECORD) {
        let offset = (bytes.len() / RECORD * RECORD) as u64;
        return Err(Error::Format {
            offset,
            message: format!(
                "truncated record: file size {} is not a multiple of {RECORD}",
                bytes.len()
            ),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for (r, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = rec[0] as u32;
        if label >= CLASSES {
            return Err(Error::Format {
                offset: (r * RECORD) as u64,
                message: format!("label {label} > 9"),
            });
        }
        let planes = &rec[1..];
        let mut pixels = vec![0.0f32; 3 * PLANE];
        for i in 0..PLANE {
            for ch in 0..3 {
                pixels[i * 3 + ch] = planes[ch * PLANE + i] as f32 / 255.0;
            }
        }
        images.push(ImageTensor::new(SHAPE, pixels)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Encodes a labelled 32×32×3 dataset back into the binary layout, quantizing
/// pixels to the nearest byte.
pub fn encode_records(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.shape() != SHAPE {
        return Err(Error::shape(SHAPE, ds.shape()));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Argument("CIFAR-10 records need labels".into()))?;
    let mut out = Vec::with_capacity(ds.len() * RECORD);
    for (img, &label) in ds.images().iter().zip(labels) {
        if label >= CLASSES {
            return Err(Error::Argument(format!("label {label} > 9")));
        }
        out.push(label as u8);
        let px = img.pixels();
        for ch in 0..3 {
            for i in 0..PLANE {
                out.push((px[i * 3 + ch] * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}
