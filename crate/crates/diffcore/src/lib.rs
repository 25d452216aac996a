//! Small reverse-mode automatic differentiation library with the layers and
//! optimizer needed to train convolutional encoders, decoders and
//! discriminators on a CPU.
//!
//! Gradients of gradients are supported for every operator except
//! [`ops::bilinear_sample`], which is first-order only.

mod error;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;
mod real;
mod tensor;

pub use error::{DiffError, Result};
pub use real::Real;
pub use tensor::{grad, is_grad_enabled, no_grad, GradModeGuard, Grads, Tensor};
