//! Desk-scale denoising diffusion models and the privacy attacks and audits
//! run against them: training-data extraction, membership inference,
//! inpainting reconstruction, deduplication and canary exposure.

pub mod data;
pub mod defenses;
pub mod diffusion;
pub mod error;
pub mod extraction;
pub mod image;
pub mod inpainting;
pub mod membership;
pub mod metrics;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use image::{ImageTensor, Shape};
