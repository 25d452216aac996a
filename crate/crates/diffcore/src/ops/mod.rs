//! Differentiable operators. Most are methods on [`Tensor`](crate::Tensor);
//! the multi-input convolution and sampling operators are free functions.

mod broadcast;
mod conv;
mod elementwise;
mod index;
mod linalg;
mod shape;

pub use conv::{conv2d, conv2d_weight, conv_transpose2d, conv_transpose2d_sized, ConvGeom};
pub use index::bilinear_sample;
