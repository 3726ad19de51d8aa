//! Tensor primitives, losses, the Adam optimizer and finite-difference checking.

mod adam;
mod gradcheck;
pub mod ops;
pub mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, EntryError, GradCheckReport};
pub use ops::{distance_softmax, euclidean, l2_normalize, matmul, matmul_backward, nll_from_probs, NORM_EPS, P_FLOOR};
pub use tensor::{HasParameters, Parameter, Real, Tensor};
