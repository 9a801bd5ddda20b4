//! Diffusion models augmented with jointly learned discrete latents,
//! reproduced at desk scale on a 2-D Gaussian mixture.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod diffusion;
pub mod disco;
pub mod error;
pub mod latentprior;
pub mod pipeline;
pub mod sampler;
pub mod tensorgrad;

pub use error::{Error, Result};
