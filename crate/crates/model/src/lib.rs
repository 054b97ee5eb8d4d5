//! The two-domain denoising network and its training loop.
//!
//! A low-dose sinogram passes through a row-embedding head, a transformer
//! encoder over view angles, and an MLP tail with residual refinement to
//! produce the denoised sinogram. The sinogram residual (input minus
//! denoised) is embedded per view by a shared 1D convolution stack,
//! mapped by a learned linear layer into an image-domain noise estimate,
//! and the coarse image (low-dose image minus estimated noise) is refined
//! by a small U-Net. The loss combines L1 terms in both domains with the
//! sinogram structure losses.

pub mod config;
mod error;
pub mod loss;
pub mod net;
pub mod train;

pub use config::{ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use net::DenoiseModel;
