//! Reverse-mode autodiff on dense tensors (up to 4 axes), plus the layers
//! and optimizer this project trains with: linear stacks, multi-head
//! self-attention, 1D/2D convolution, residual blocks, a small U-Net, Adam
//! and a step learning-rate schedule.
//!
//! Training arithmetic runs at `f32`; gradient-check suites instantiate
//! the same graphs at `f64`.

pub mod adam;
pub mod check;
pub mod ckpt;
mod error;
pub mod init;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamState, LrSchedule};
pub use error::{Error, Result};
pub use params::{ParamStore, Session};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, TensorData};
