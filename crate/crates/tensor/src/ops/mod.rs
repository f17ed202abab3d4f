//! Differentiable tensor operations.

mod basic;
mod conv;
mod norm;
mod pool;
mod resample;

pub use basic::{add, add_scalar, cat, mean, mul, narrow, relu, reshape, scale, sub, sum};
pub use conv::{conv2d, conv3d, conv_output_len};
pub use norm::{batch_norm_eval, batch_norm_train, BatchStats};
pub use pool::maxpool2;
pub use resample::{upsample_bilinear, upsample_bilinear_to, LinearTaps};
