use crate::diffusion::nn::{mse_rows, Arch, Network, Real};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::seed;

/// A trainable noise predictor: architecture plus flat `f32` parameters.
#[derive(Debug, Clone)]
pub struct DenoiserModel {
    net: Network,
    theta: Vec<f32>,
    /// Optimizer steps taken to reach these parameters.
    pub step: u64,
}

impl PartialEq for DenoiserModel {
    fn eq(&self, other: &Self) -> bool {
        self.net.arch() == other.net.arch() && self.theta == other.theta && self.step == other.step
    }
}

impl DenoiserModel {
    pub fn init(arch: &Arch, s: &NoiseSchedule, seed: u64) -> Result<Self> {
        let net = Network::new(arch, s)?;
        let theta = net.init(&mut seed::rng_for(seed, &[0x1417]));
        Ok(DenoiserModel {
            net,
            theta,
            step: 0,
        })
    }

    pub fn from_parts(arch: &Arch, s: &NoiseSchedule, theta: Vec<f32>, step: u64) -> Result<Self> {
        let net = Network::new(arch, s)?;
        if theta.len() != net.param_count() {
            return Err(Error::shape(net.param_count(), theta.len()));
        }
        Ok(DenoiserModel { net, theta, step })
    }

    pub fn arch(&self) -> &Arch {
        self.net.arch()
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f32] {
        &mut self.theta
    }

    /// ε-prediction for a batch of model-space inputs.
    pub fn predict_eps(&self, x: &[f32], t: &[usize], labels: Option<&[u32]>) -> Result<Vec<f32>> {
        self.net.forward(&self.theta, x, t, labels)
    }

    /// Per-example losses for a batch of clean model-space images, each noised
    /// with its own timestep and noise.
    pub fn batch_losses(
        &self,
        s: &NoiseSchedule,
        clean: &[f32],
        t: &[usize],
        eps: &[f32],
        labels: Option<&[u32]>,
    ) -> Result<Vec<f64>> {
        let d = self.arch().input.dim();
        if clean.len() != eps.len() || clean.len() != t.len() * d {
            return Err(Error::shape(t.len() * d, clean.len().min(eps.len())));
        }
        let mut noised = vec![0.0f32; clean.len()];
        for (i, &ti) in t.iter().enumerate() {
            s.check_t(ti)?;
            let r = i * d..(i + 1) * d;
            super::schedule::add_noise_into(
                &clean[r.clone()],
                s.a(ti),
                &eps[r.clone()],
                &mut noised[r],
            );
        }
        let pred = self.predict_eps(&noised, t, labels)?;
        Ok(mse_rows(&pred, eps, d, false).0)
    }
}

/// `mean_i (eps_i - f(sqrt(a_t) x_i + sqrt(1 - a_t) eps_i, t))²` for one image,
/// with `x` in pixel space and `eps` a flat array of the same length.
pub fn diffusion_loss(
    m: &DenoiserModel,
    s: &NoiseSchedule,
    x: &ImageTensor,
    t: usize,
    eps: &[f32],
    label: Option<u32>,
) -> Result<f64> {
    if x.shape() != m.arch().input {
        return Err(Error::shape(m.arch().input, x.shape()));
    }
    if eps.len() != x.dim() {
        return Err(Error::shape(x.dim(), eps.len()));
    }
    let labels = label.map(|l| [l]);
    Ok(m.batch_losses(
        s,
        &x.to_model_space(),
        &[t],
        eps,
        labels.as_ref().map(|l| &l[..]),
    )?[0])
}

/// Mean loss over a batch and its gradient with respect to `params`, in any
/// precision. `clean` is model-space.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad<F: Real>(
    net: &Network,
    params: &[F],
    s: &NoiseSchedule,
    clean: &[F],
    t: &[usize],
    eps: &[F],
    labels: Option<&[u32]>,
    grads: &mut [F],
) -> Result<Vec<f64>> {
    let d = net.arch().input.dim();
    let mut noised = vec![F::zero(); clean.len()];
    for (i, &ti) in t.iter().enumerate() {
        s.check_t(ti)?;
        let (sa, sn) = (F::lit(s.a(ti).sqrt()), F::lit((1.0 - s.a(ti)).sqrt()));
        for j in i * d..(i + 1) * d {
            noised[j] = sa * clean[j] + sn * eps[j];
        }
    }
    let (pred, cache) = net.forward_cached(params, &noised, t, labels)?;
    let (losses, d_out) = mse_rows(&pred, eps, d, true);
    net.backward(params, &cache, &d_out.expect("requested"), grads);
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::nn::Conditioning;
    use crate::diffusion::schedule::ScheduleParams;
    use crate::image::Shape;

    fn arch() -> Arch {
        Arch {
            input: Shape::new(2, 2, 1),
            hidden: vec![6, 6],
            time_dim: 4,
            conditioning: Conditioning::Unconditional,
            data_std: None,
        }
    }

    #[test]
    fn zero_output_unit_noise_gives_unit_loss() {
        let mut m =
            DenoiserModel::init(&arch(), &ScheduleParams::DESK.build().unwrap(), 0).unwrap();
        m.theta_mut().iter_mut().for_each(|p| *p = 0.0);
        let s = ScheduleParams::DESK.build().unwrap();
        let x = ImageTensor::filled(Shape::new(2, 2, 1), 0.3);
        let l = diffusion_loss(&m, &s, &x, 10, &[1.0; 4], None).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert!(diffusion_loss(&m, &s, &x, s.steps() + 1, &[1.0; 4], None).is_err());
        assert!(diffusion_loss(&m, &s, &x, 1, &[1.0; 3], None).is_err());
    }

    #[test]
    fn exact_prediction_gives_zero_loss() {
        // A model whose only nonzero parameters are the output bias predicts a
        // constant, so eps equal to that constant is predicted exactly.
        let mut m =
            DenoiserModel::init(&arch(), &ScheduleParams::DESK.build().unwrap(), 0).unwrap();
        m.theta_mut().iter_mut().for_each(|p| *p = 0.0);
        let n = m.theta().len();
        m.theta_mut()[n - 4..].copy_from_slice(&[0.5, -0.25, 1.0, 0.0]);
        let s = ScheduleParams::DESK.build().unwrap();
        let x = ImageTensor::filled(Shape::new(2, 2, 1), 0.9);
        let l = diffusion_loss(&m, &s, &x, 42, &[0.5, -0.25, 1.0, 0.0], None).unwrap();
        assert_eq!(l, 0.0);
    }
}
