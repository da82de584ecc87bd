//! Ancestral sampling from pure noise, optionally striding over timesteps.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::predictor::NoisePredictor;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::seed;

/// Images generated together share this many rows per network call.
pub(crate) const CHUNK: usize = 128;

/// `seed` is the sampler randomness; `label` the optional class condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub seed: u64,
    pub label: Option<u32>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOptions {
    pub stride: usize,
    /// Clamp the implied clean image to `[-1, 1]` at every step.
    pub clip_denoised: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            stride: 1,
            clip_denoised: true,
        }
    }
}

/// Timesteps visited by a strided sampler: `T, T-stride, ...` while positive,
/// then a final (possibly shorter) step to 0.
pub fn strided_timesteps(steps: usize, stride: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (1..=steps).rev().step_by(stride.max(1)).collect();
    ts.push(0);
    ts
}

/// One reverse update `z_t -> z_{t'}` (`t' < t`) for a single row, given the
/// predicted noise; `noise` is only read when the step variance is positive.
pub(crate) fn reverse_row(
    s: &NoiseSchedule,
    t: usize,
    t_next: usize,
    z: &mut [f32],
    eps_hat: &[f32],
    noise: &mut dyn FnMut() -> f32,
    clip: bool,
) {
    let (a_t, a_n) = (s.a(t), s.a(t_next));
    let beta = 1.0 - a_t / a_n;
    let c_x0 = a_n.sqrt() * beta / (1.0 - a_t);
    let c_z = (a_t / a_n).sqrt() * (1.0 - a_n) / (1.0 - a_t);
    let var = if t_next == 0 {
        0.0
    } else {
        (1.0 - a_n) / (1.0 - a_t) * beta
    };
    let std = var.sqrt() as f32;
    let (sa, sn) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    for (zi, &e) in z.iter_mut().zip(eps_hat) {
        let mut x0 = (*zi as f64 - sn * e as f64) / sa;
        if clip {
            x0 = x0.clamp(-1.0, 1.0);
        }
        let mean = (c_x0 * x0 + c_z * *zi as f64) as f32;
        *zi = if std > 0.0 {
            mean + std * noise()
        } else {
            mean
        };
    }
}

pub fn sample<P: NoisePredictor + ?Sized>(
    m: &P,
    s: &NoiseSchedule,
    req: &GenerationRequest,
    stride: usize,
) -> Result<Vec<ImageTensor>> {
    sample_with(
        m,
        s,
        req,
        &SamplerOptions {
            stride,
            ..Default::default()
        },
    )
}

/// Generates `req.count` images; image `i` depends only on `(req.seed, i)`.
pub fn sample_with<P: NoisePredictor + ?Sized>(
    m: &P,
    s: &NoiseSchedule,
    req: &GenerationRequest,
    opts: &SamplerOptions,
) -> Result<Vec<ImageTensor>> {
    if req.count == 0 {
        return Err(Error::Argument(
            "generation count must be at least 1".into(),
        ));
    }
    if opts.stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    if m.needs_label() && req.label.is_none() {
        return Err(Error::Argument(
            "class-conditional model needs a label".into(),
        ));
    }
    let shape = m.input_shape();
    let d = shape.dim();
    let ts = strided_timesteps(s.steps(), opts.stride);
    let mut out = Vec::with_capacity(req.count);
    let indices: Vec<usize> = (0..req.count).collect();
    for chunk in indices.chunks(CHUNK) {
        let b = chunk.len();
        let mut rngs: Vec<seed::Rng> = chunk
            .iter()
            .map(|&i| seed::rng_for(req.seed, &[0x5a, i as u64]))
            .collect();
        let mut z = vec![0.0f32; b * d];
        for (row, rng) in z.chunks_exact_mut(d).zip(rngs.iter_mut()) {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        }
        let labels = req.label.map(|l| vec![l; b]);
        for w in ts.windows(2) {
            let (t, tn) = (w[0], w[1]);
            let eps = m.predict_eps(&z, &vec![t; b], labels.as_deref())?;
            for ((row, e), rng) in z
                .chunks_exact_mut(d)
                .zip(eps.chunks_exact(d))
                .zip(rngs.iter_mut())
            {
                reverse_row(
                    s,
                    t,
                    tn,
                    row,
                    e,
                    &mut || StandardNormal.sample(rng),
                    opts.clip_denoised,
                );
            }
        }
        out.extend(
            z.chunks_exact(d)
                .map(|row| ImageTensor::from_model_space(shape, row)),
        );
    }
    Ok(out)
}
