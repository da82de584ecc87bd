//! Forward-process noise schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters a schedule is rebuilt from; stored in checkpoint headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleParams {
    /// Desk default: 100 steps with the usual linear range scaled by 1000/T,
    /// so that the terminal signal coefficient still falls below 1e-4.
    pub const DESK: ScheduleParams = ScheduleParams {
        steps: 100,
        beta_min: 1e-3,
        beta_max: 0.2,
    };
    /// The classic 1000-step linear schedule.
    pub const CLASSIC: ScheduleParams = ScheduleParams {
        steps: 1000,
        beta_min: 1e-4,
        beta_max: 0.02,
    };

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams::DESK
    }
}

/// Cumulative signal coefficients `a[t]` and sampler deviations `sigma[t]`
/// for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    a: Vec<f64>,
    sigma: Vec<f64>,
}

/// Linear β from `beta_min` to `beta_max` over `T` steps, `a_t = Π_{s≤t}(1-β_s)`,
/// `σ_t = sqrt((1-a_{t-1})/(1-a_t) β_t)` with `σ_1 = 0`.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 1 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = if steps == 1 {
            beta_max
        } else {
            beta_min + (beta_max - beta_min) * (t - 1) as f64 / (steps - 1) as f64
        };
    }
    let mut a = vec![1.0; steps + 1];
    for t in 1..=steps {
        a[t] = a[t - 1] * (1.0 - beta[t]);
    }
    let mut sigma = vec![0.0; steps + 1];
    for t in 2..=steps {
        sigma[t] = ((1.0 - a[t - 1]) / (1.0 - a[t]) * beta[t]).sqrt();
    }
    Ok(NoiseSchedule {
        params: ScheduleParams {
            steps,
            beta_min,
            beta_max,
        },
        beta,
        a,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.params.steps
    }

    pub fn a(&self, t: usize) -> f64 {
        self.a[t]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.a
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// True when the terminal coefficient is at the numerical floor, i.e. `z_T`
    /// is (almost) pure noise.
    pub fn reaches_noise(&self) -> bool {
        self.a[self.steps()] <= 1e-4
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Argument(format!(
                "timestep {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `sqrt(a_t) x + sqrt(1 - a_t) eps`, elementwise.
pub fn add_noise(x: &[f32], t: usize, eps: &[f32], s: &NoiseSchedule) -> Result<Vec<f32>> {
    if x.len() != eps.len() {
        return Err(Error::shape(x.len(), eps.len()));
    }
    s.check_t(t)?;
    let mut out = vec![0.0; x.len()];
    add_noise_into(x, s.a(t), eps, &mut out);
    Ok(out)
}

pub(crate) fn add_noise_into(x: &[f32], a: f64, eps: &[f32], out: &mut [f32]) {
    let (sa, sn) = (a.sqrt() as f32, (1.0 - a).sqrt() as f32);
    for ((o, &xi), &e) in out.iter_mut().zip(x).zip(eps) {
        *o = sa * xi + sn * e;
    }
}
