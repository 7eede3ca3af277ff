//! Deterministic tensor arithmetic, probability transforms, seeded random
//! streams, and the finite-difference gradient oracle.

mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use gradcheck::finite_diff_gradient;
pub use ops::{kl_div, sample_beta, softmax, softmax_slice};
pub use rng::RngStream;
pub use tensor::Tensor;
