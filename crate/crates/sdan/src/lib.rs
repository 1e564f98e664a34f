//! SDAN: a lightweight single-image super-resolution network built from
//! star distillation blocks and multi-shape multi-scale large-kernel
//! attention, together with everything needed to train, evaluate and run it:
//! an NCHW tensor library with reverse-mode differentiation, the Adan
//! optimizer, bicubic degradation, Y-channel PSNR/SSIM, and bit-exact
//! checkpoints.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
