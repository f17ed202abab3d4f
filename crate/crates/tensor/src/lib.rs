//! Dense `f32`/`f64` tensors with a reverse-mode gradient engine and the
//! handful of differentiable operations a small stereo network needs:
//! 2-D and 3-D convolution, batch normalization, ReLU, 2×2 max pooling and
//! align-corners bilinear upsampling.
//!
//! Tensors are immutable values. An operation whose inputs require gradients
//! records a backward node; [`Tensor::backward`] walks that graph and returns
//! a [`Gradients`] store keyed by leaf tensor. Other crates can add their own
//! differentiable operations through [`Tensor::from_op`] and [`Backward`].

mod autograd;
mod error;
mod real;
mod tensor;

pub mod adam;
pub mod checkpoint;
pub mod exec;
pub mod gradcheck;
pub mod nn;
pub mod ops;

pub use autograd::{Backward, Gradients, NodeId};
pub use error::{Result, TensorError};
pub use real::Real;
pub use tensor::Tensor;
