use std::path::PathBuf;

use anystereo_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("image size {height}x{width} is not a multiple of 16; pad it first (io::pad_to_16)")]
    NotDivisible { height: usize, width: usize },
    #[error("{0}")]
    Precondition(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("validity mask selects no pixels")]
    EmptyMask,
    #[error("affinity is not normalized: |w| sums to {sum} at pixel {pixel}")]
    UnnormalizedAffinity { sum: f64, pixel: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
}

impl StereoError {
    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        StereoError::Precondition(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        StereoError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = StereoError> = std::result::Result<T, E>;
