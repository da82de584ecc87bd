//! Resampling inpainting: at every reverse step the known pixels are replaced
//! by a forward-noised copy of the original while the unknown pixels follow
//! the model; periodically the chain jumps back up a few steps and is
//! re-denoised so the two regions harmonize.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::predictor::NoisePredictor;
use crate::diffusion::sample::{reverse_row, CHUNK};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InpaintConfig {
    /// Steps re-noised per jump.
    pub jump_length: usize,
    /// Passes over every jump segment (1 disables resampling).
    pub resamplings: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            jump_length: 10,
            resamplings: 2,
        }
    }
}

/// The visited timestep sequence, starting at `T` and ending at 0. A decrease
/// is a reverse (model) step, an increase a one-step forward re-noising.
pub fn jump_schedule(steps: usize, cfg: &InpaintConfig) -> Vec<usize> {
    let jump = cfg.jump_length.max(1);
    let mut remaining = vec![0usize; steps + 1];
    if steps > jump {
        for j in (0..steps - jump).step_by(jump) {
            remaining[j] = cfg.resamplings.saturating_sub(1);
        }
    }
    let mut t = steps;
    let mut ts = vec![t];
    while t >= 1 {
        t -= 1;
        ts.push(t);
        if remaining[t] > 0 {
            remaining[t] -= 1;
            for _ in 0..jump {
                t += 1;
                ts.push(t);
            }
        }
    }
    ts
}

/// Inpaints one image; `mask[i]` is true where `x_masked` is known.
pub fn inpaint<P: NoisePredictor + ?Sized>(
    m: &P,
    s: &NoiseSchedule,
    x_masked: &ImageTensor,
    mask: &[bool],
    seed: u64,
    label: Option<u32>,
    cfg: &InpaintConfig,
) -> Result<ImageTensor> {
    Ok(inpaint_many(m, s, x_masked, mask, &[seed], label, cfg)?.remove(0))
}

/// One inpainting per seed; each result depends only on its own seed.
pub fn inpaint_many<P: NoisePredictor + ?Sized>(
    m: &P,
    s: &NoiseSchedule,
    x_masked: &ImageTensor,
    mask: &[bool],
    seeds: &[u64],
    label: Option<u32>,
    cfg: &InpaintConfig,
) -> Result<Vec<ImageTensor>> {
    let shape = m.input_shape();
    if x_masked.shape() != shape {
        return Err(Error::shape(shape, x_masked.shape()));
    }
    if mask.len() != x_masked.dim() {
        return Err(Error::shape(x_masked.dim(), mask.len()));
    }
    if m.needs_label() && label.is_none() {
        return Err(Error::Argument(
            "class-conditional model needs a label".into(),
        ));
    }
    let d = shape.dim();
    let known = x_masked.to_model_space();
    let ts = jump_schedule(s.steps(), cfg);
    let mut out = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(CHUNK) {
        let b = chunk.len();
        let mut rngs: Vec<seed::Rng> = chunk
            .iter()
            .map(|&sd| seed::rng_for(sd, &[0x1a9]))
            .collect();
        let mut z = vec![0.0f32; b * d];
        for (row, rng) in z.chunks_exact_mut(d).zip(rngs.iter_mut()) {
            row.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        }
        let labels = label.map(|l| vec![l; b]);
        for w in ts.windows(2) {
            let (t, tn) = (w[0], w[1]);
            if tn > t {
                let beta = s.beta(tn);
                let (keep, add) = ((1.0 - beta).sqrt() as f32, beta.sqrt() as f32);
                for (row, rng) in z.chunks_exact_mut(d).zip(rngs.iter_mut()) {
                    for v in row.iter_mut() {
                        let n: f32 = StandardNormal.sample(rng);
                        *v = keep * *v + add * n;
                    }
                }
                continue;
            }
            let eps = m.predict_eps(&z, &vec![t; b], labels.as_deref())?;
            let (ka, kn) = (s.a(tn).sqrt() as f32, (1.0 - s.a(tn)).sqrt() as f32);
            for ((row, e), rng) in z
                .chunks_exact_mut(d)
                .zip(eps.chunks_exact(d))
                .zip(rngs.iter_mut())
            {
                reverse_row(s, t, tn, row, e, &mut || StandardNormal.sample(rng), true);
                for ((v, &k), &is_known) in row.iter_mut().zip(&known).zip(mask) {
                    if is_known {
                        *v = if tn == 0 {
                            k
                        } else {
                            let n: f32 = StandardNormal.sample(rng);
                            ka * k + kn * n
                        };
                    }
                }
            }
        }
        for row in z.chunks_exact(d) {
            let img = ImageTensor::from_model_space(shape, row);
            let mut px = img.into_pixels();
            for ((p, &orig), &is_known) in px.iter_mut().zip(x_masked.pixels()).zip(mask) {
                if is_known {
                    *p = orig;
                }
            }
            out.push(ImageTensor::new(shape, px)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::DenoiserModel;
    use crate::diffusion::nn::{Arch, Conditioning};
    use crate::diffusion::schedule::ScheduleParams;
    use crate::image::Shape;

    fn model() -> DenoiserModel {
        let arch = Arch {
            input: Shape::new(4, 4, 1),
            hidden: vec![8],
            time_dim: 4,
            conditioning: Conditioning::Unconditional,
            data_std: Some(0.5),
        };
        DenoiserModel::init(&arch, &ScheduleParams::DESK.build().unwrap(), 5).unwrap()
    }

    #[test]
    fn schedule_without_resampling_is_monotone() {
        let ts = jump_schedule(
            20,
            &InpaintConfig {
                jump_length: 5,
                resamplings: 1,
            },
        );
        assert_eq!(ts, (0..=20).rev().collect::<Vec<_>>());
    }

    #[test]
    fn schedule_with_resampling_revisits_segments() {
        let cfg = InpaintConfig {
            jump_length: 3,
            resamplings: 2,
        };
        let ts = jump_schedule(9, &cfg);
        assert_eq!(ts.first(), Some(&9));
        assert_eq!(ts.last(), Some(&0));
        let reverse = ts.windows(2).filter(|w| w[1] < w[0]).count();
        let forward = ts.windows(2).filter(|w| w[1] > w[0]).count();
        assert_eq!(reverse - forward, 9);
        // jumps start at t = 0 and t = 3 (those below T - jump), each once
        assert_eq!(forward, 6);
        assert!(ts.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
    }

    #[test]
    fn all_known_returns_input() {
        let m = model();
        let s = ScheduleParams::DESK.build().unwrap();
        let x = crate::data::toy::uniform_noise(Shape::new(4, 4, 1), 1, 2).remove(0);
        let out = inpaint(&m, &s, &x, &[true; 16], 1, None, &InpaintConfig::default()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn known_region_is_exact_and_deterministic() {
        let m = model();
        let s = ScheduleParams::DESK.build().unwrap();
        let x = crate::data::toy::uniform_noise(Shape::new(4, 4, 1), 1, 3).remove(0);
        let mask: Vec<bool> = (0..16).map(|i| i % 4 >= 2).collect();
        let outs =
            inpaint_many(&m, &s, &x, &mask, &[1, 2], None, &InpaintConfig::default()).unwrap();
        for o in &outs {
            for ((p, q), &k) in o.pixels().iter().zip(x.pixels()).zip(&mask) {
                if k {
                    assert_eq!(p, q);
                }
            }
        }
        assert_ne!(outs[0], outs[1]);
        let again = inpaint(&m, &s, &x, &mask, 2, None, &InpaintConfig::default()).unwrap();
        assert_eq!(again, outs[1]);
        assert!(inpaint(&m, &s, &x, &mask[..15], 2, None, &InpaintConfig::default()).is_err());
    }
}
