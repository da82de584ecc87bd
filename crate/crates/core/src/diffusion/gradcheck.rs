//! Finite-difference verification of the hand-written backward pass.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffusion::model::loss_and_grad;
use crate::diffusion::nn::{Arch, Conditioning, Network};
use crate::diffusion::schedule::ScheduleParams;
use crate::error::Result;
use crate::image::Shape;
use crate::seed;

/// Worst relative error found in one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: String,
    pub rel_error: f64,
}

/// Compares the analytic gradient of the batch-mean loss with central
/// differences on a random small network and random inputs, all in `f64`.
/// Per block, the error is `|g - g_fd| / max(|g|, |g_fd|, floor)` over up to
/// `probes` coordinates.
pub fn check_random_instance(seed: u64, probes: usize) -> Result<Vec<BlockError>> {
    let mut rng = seed::rng_for(seed, &[0x9c]);
    let side = rng.random_range(2..=4);
    let channels = rng.random_range(1..=2);
    let input = Shape::new(side, side, channels);
    let layers = rng.random_range(1..=3);
    let width = rng.random_range(3..=8);
    let conditioning = if rng.random_bool(0.5) {
        Conditioning::ClassConditional {
            classes: rng.random_range(1..=3),
        }
    } else {
        Conditioning::Unconditional
    };
    let arch = Arch {
        input,
        hidden: (0..layers)
            .map(|l| {
                if l == 0 && rng.random_bool(0.3) {
                    width + 1
                } else {
                    width
                }
            })
            .collect(),
        time_dim: 2 * rng.random_range(1..=3),
        conditioning,
        data_std: rng.random_bool(0.7).then(|| rng.random_range(0.3..1.0)),
    };
    let schedule = ScheduleParams {
        steps: 20,
        beta_min: 1e-3,
        beta_max: 0.3,
    }
    .build()?;
    let net = Network::new(&arch, &schedule)?;
    let mut params: Vec<f64> = net.init(&mut rng).iter().map(|&p| p as f64).collect();
    // Nonzero biases and a larger output layer exercise every path.
    for p in params.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *p += 0.05 * z;
    }
    let batch = rng.random_range(1..=3);
    let d = input.dim();
    let clean: Vec<f64> = (0..batch * d)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let eps: Vec<f64> = (0..batch * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let t: Vec<usize> = (0..batch)
        .map(|_| rng.random_range(0..=schedule.steps()))
        .collect();
    let labels: Option<Vec<u32>> = arch
        .classes()
        .map(|k| (0..batch).map(|_| rng.random_range(0..k as u32)).collect());
    let labels = labels.as_deref();

    let mean_loss = |p: &[f64]| -> Result<f64> {
        let mut scratch = vec![0.0; p.len()];
        let l = loss_and_grad(&net, p, &schedule, &clean, &t, &eps, labels, &mut scratch)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    };
    let mut grads = vec![0.0; params.len()];
    loss_and_grad(
        &net, &params, &schedule, &clean, &t, &eps, labels, &mut grads,
    )?;

    let h = 1e-5;
    let mut out = Vec::new();
    for (name, off, len) in net.blocks() {
        let mut worst = 0.0f64;
        for k in 0..probes.min(len) {
            let i = off
                + if len <= probes {
                    k
                } else {
                    rng.random_range(0..len)
                };
            let orig = params[i];
            params[i] = orig + h;
            let up = mean_loss(&params)?;
            params[i] = orig - h;
            let down = mean_loss(&params)?;
            params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let scale = grads[i].abs().max(fd.abs()).max(1e-6);
            worst = worst.max((grads[i] - fd).abs() / scale);
        }
        out.push(BlockError {
            block: name,
            rel_error: worst,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradient_matches_differences() {
        for s in 0..10 {
            for b in check_random_instance(s, 8).unwrap() {
                assert!(b.rel_error <= 1e-4, "instance {s}: {b:?}");
            }
        }
    }
}
