//! Datasets: uniform-shape image collections with dense ids, optional class
//! labels and a provenance trail back to the files (or parent dataset) they
//! came from.

pub mod cifar;
pub mod raw;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// Source file(s) or derivation, e.g. `toy:blobs(seed=3)` or `parent|dedup(0.9)`.
    pub source: String,
    /// Byte offset of each record in the source file, or the row index in the
    /// parent dataset for derived datasets.
    pub offsets: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    shape: Shape,
    images: Vec<ImageTensor>,
    labels: Option<Vec<u32>>,
    num_classes: Option<u32>,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        shape: Shape,
        images: Vec<ImageTensor>,
        labels: Option<Vec<u32>>,
        num_classes: Option<u32>,
        provenance: Provenance,
    ) -> Result<Self> {
        if let Some(img) = images.iter().find(|i| i.shape() != shape) {
            return Err(Error::shape(shape, img.shape()));
        }
        if provenance.offsets.len() != images.len() {
            return Err(Error::Argument(format!(
                "provenance lists {} offsets for {} images",
                provenance.offsets.len(),
                images.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.len() {
                return Err(Error::shape(images.len(), labels.len()));
            }
            let classes = num_classes
                .ok_or_else(|| Error::Argument("labels given without a class count".into()))?;
            if let Some(l) = labels.iter().find(|&&l| l >= classes) {
                return Err(Error::Argument(format!(
                    "label {l} outside {classes} classes"
                )));
            }
        }
        Ok(Dataset {
            shape,
            images,
            labels,
            num_classes,
            provenance,
        })
    }

    /// Unlabelled dataset with a synthetic provenance.
    pub fn from_images(shape: Shape, images: Vec<ImageTensor>, source: &str) -> Result<Self> {
        let offsets = (0..images.len() as u64).collect();
        Dataset::new(
            shape,
            images,
            None,
            None,
            Provenance {
                source: source.into(),
                offsets,
            },
        )
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Ids are dense: the id of an image is its row.
    pub fn ids(&self) -> std::ops::Range<usize> {
        0..self.images.len()
    }

    pub fn image(&self, id: usize) -> &ImageTensor {
        &self.images[id]
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn label(&self, id: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[id])
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<u32> {
        self.num_classes
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// New dataset made of the given rows (repeats allowed); ids are re-densified
    /// and the provenance offsets point at the parent rows.
    pub fn select(&self, rows: &[usize], tag: &str) -> Dataset {
        Dataset {
            shape: self.shape,
            images: rows.iter().map(|&r| self.images[r].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            num_classes: self.num_classes,
            provenance: Provenance {
                source: format!("{}|{}", self.provenance.source, tag),
                offsets: rows.iter().map(|&r| r as u64).collect(),
            },
        }
    }

    /// New dataset with extra images appended (labels, when present, must be supplied).
    pub fn with_appended(
        &self,
        extra: &[ImageTensor],
        extra_labels: Option<&[u32]>,
        tag: &str,
    ) -> Result<Dataset> {
        let mut images = self.images.clone();
        images.extend_from_slice(extra);
        let labels = match (&self.labels, extra_labels) {
            (None, _) => None,
            (Some(l), Some(e)) if e.len() == extra.len() => {
                Some(l.iter().chain(e).copied().collect())
            }
            (Some(_), _) => {
                return Err(Error::Argument(
                    "labelled dataset needs labels for appended images".into(),
                ))
            }
        };
        let n = self.len() as u64;
        let mut offsets: Vec<u64> = (0..n).collect();
        offsets.extend((0..extra.len() as u64).map(|i| n + i));
        Dataset::new(
            self.shape,
            images,
            labels,
            self.num_classes,
            Provenance {
                source: format!("{}|{}", self.provenance.source, tag),
                offsets,
            },
        )
    }

    /// Drops labels, e.g. to train an unconditional model on labelled data.
    pub fn unlabelled(&self) -> Dataset {
        Dataset {
            labels: None,
            num_classes: None,
            ..self.clone()
        }
    }
}
