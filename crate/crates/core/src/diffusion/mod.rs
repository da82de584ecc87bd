//! Denoising diffusion: forward noising, the noise-prediction network and its
//! loss, training, the ancestral sampler and the inpainting sampler.

pub mod checkpoint;
pub mod gradcheck;
pub mod inpaint;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod sample;
pub mod schedule;
pub mod train;

pub use model::{diffusion_loss, DenoiserModel};
pub use nn::{Arch, Conditioning};
pub use predictor::{EmpiricalDenoiser, NoisePredictor};
pub use schedule::{add_noise, make_schedule, NoiseSchedule, ScheduleParams};
