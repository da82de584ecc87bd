//! Anything that predicts the added noise from a noised batch.

use crate::diffusion::model::DenoiserModel;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};

pub trait NoisePredictor: Sync {
    fn input_shape(&self) -> Shape;
    fn needs_label(&self) -> bool;
    /// `x` is `t.len()` model-space rows; returns the same number of ε-rows.
    fn predict_eps(&self, x: &[f32], t: &[usize], labels: Option<&[u32]>) -> Result<Vec<f32>>;
}

impl NoisePredictor for DenoiserModel {
    fn input_shape(&self) -> Shape {
        self.arch().input
    }

    fn needs_label(&self) -> bool {
        self.arch().classes().is_some()
    }

    fn predict_eps(&self, x: &[f32], t: &[usize], labels: Option<&[u32]>) -> Result<Vec<f32>> {
        DenoiserModel::predict_eps(self, x, t, labels)
    }
}

/// The exact minimizer of the diffusion loss over a finite training set: the
/// posterior-weighted noise given that the clean image is one of the stored
/// images. Sampling from it reproduces training images, so it serves as a
/// perfectly memorizing reference model.
#[derive(Debug, Clone)]
pub struct EmpiricalDenoiser {
    shape: Shape,
    points: Vec<Vec<f32>>,
    schedule: NoiseSchedule,
}

impl EmpiricalDenoiser {
    pub fn new(images: &[ImageTensor], schedule: &NoiseSchedule) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Argument("empty image set".into()))?;
        let shape = first.shape();
        if images.iter().any(|i| i.shape() != shape) {
            return Err(Error::Argument("mixed image shapes".into()));
        }
        Ok(EmpiricalDenoiser {
            shape,
            points: images.iter().map(ImageTensor::to_model_space).collect(),
            schedule: schedule.clone(),
        })
    }
}

impl NoisePredictor for EmpiricalDenoiser {
    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn needs_label(&self) -> bool {
        false
    }

    fn predict_eps(&self, x: &[f32], t: &[usize], _labels: Option<&[u32]>) -> Result<Vec<f32>> {
        let d = self.shape.dim();
        if x.len() != t.len() * d {
            return Err(Error::shape(t.len() * d, x.len()));
        }
        let mut out = vec![0.0f32; x.len()];
        let mut logw = vec![0.0f64; self.points.len()];
        for ((z, &ti), o) in x.chunks_exact(d).zip(t).zip(out.chunks_exact_mut(d)) {
            self.schedule.check_t(ti)?;
            let a = self.schedule.a(ti);
            let (sa, var) = (a.sqrt(), (1.0 - a).max(1e-12));
            for (lw, p) in logw.iter_mut().zip(&self.points) {
                let d2: f64 = z
                    .iter()
                    .zip(p)
                    .map(|(&zi, &pi)| (zi as f64 - sa * pi as f64).powi(2))
                    .sum();
                *lw = -d2 / (2.0 * var);
            }
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            let mut mean = vec![0.0f64; d];
            for (lw, p) in logw.iter().zip(&self.points) {
                let w = (lw - mx).exp();
                total += w;
                for (m, &pi) in mean.iter_mut().zip(p) {
                    *m += w * pi as f64;
                }
            }
            for ((oi, &zi), m) in o.iter_mut().zip(z).zip(&mean) {
                *oi = ((zi as f64 - sa * m / total) / var.sqrt()) as f32;
            }
        }
        Ok(out)
    }
}
