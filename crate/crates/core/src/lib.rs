//! Cross-ensemble knowledge distillation for mixed-augmentation training.
//!
//! Two small convolutional networks are trained jointly: each receives a
//! differently mixed version of the same image pairs, supervises the other
//! through cross distillation, and both distill from a row-wise-minimum
//! logit ensemble. Everything runs on the CPU in f64 and is bit-reproducible
//! from the configured seeds.

pub mod augment;
pub mod data;
pub mod distill;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod parallel;

pub use error::{CekdError, Result};
pub use numerics::{RngStream, Tensor};
