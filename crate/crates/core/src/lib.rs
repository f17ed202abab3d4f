//! Anytime stereo disparity estimation.
//!
//! A shared-weight U-Net extracts features at 1/16, 1/8 and 1/4 scale on
//! demand. Stage 1 regresses a full-range disparity at 1/16 from an L1
//! cost volume; stages 2 and 3 warp the right features by the upsampled
//! estimate and regress a ±2 residual at 1/8 and 1/4; stage 4 sharpens the
//! result with a learned spatial propagation pass. Every stage emits a
//! full-resolution map, and [`pipeline::infer_staged`] lets a caller poll
//! the latest one while later stages are still running.

pub mod costvol;
pub mod counters;
pub mod data;
pub mod dispnet;
mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod spn;
pub mod train;
pub mod unet;

pub use anystereo_tensor as tensor;
pub use anystereo_tensor::{Real, Tensor};
pub use counters::{ForwardCtx, LayerCounters};
pub use dispnet::DisparityMap;
pub use error::{Result, StereoError};
pub use model::{ModelConfig, StereoModel};
pub use pipeline::{infer_staged, InferOptions, InferenceHandle, StageResult};
