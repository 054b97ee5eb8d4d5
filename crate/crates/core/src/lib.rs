//! Desk-scale CT simulation and sinogram-domain structure toolkit.
//!
//! The pipeline stages are:
//!
//! 1. **Phantoms** – seeded analytic ellipse scenes with exact rasterization
//!    and closed-form line integrals.
//! 2. **Projection / reconstruction** – ray-driven forward projector and
//!    filtered back-projection for parallel and equiangular fan geometries.
//! 3. **Noise** – photon-counting low-dose noise insertion on log-domain
//!    projection data, deterministic per `(seed, view, detector)`.
//! 4. **Structure** – conjugate-ray consistency and second-derivative
//!    losses on sinograms, with analytic gradients.
//! 5. **Metrics / datasets** – PSNR/SSIM/RMSE, dataset generation and
//!    evaluation reports.

pub mod conjugate;
pub mod dataset;
mod error;
pub mod fbp;
pub mod geometry;
pub mod image;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod project;
pub mod rng;
pub mod sinogram;
pub mod structure;

pub use error::{Error, Result};
pub use fbp::{fbp, ramp_filter, FilterKind};
pub use geometry::{FanGeometry, Ray, ScanMode};
pub use image::Image;
pub use noise::{insert_low_dose_noise, noise_sigma, DoseConfig};
pub use phantom::{analytic_sinogram, make_phantom, rasterize, Complexity, Ellipse, Phantom};
pub use project::forward_project;
pub use sinogram::Sinogram;
