//! Reverse-mode automatic differentiation on dense `f64` matrices, the layers
//! the motion models are built from, and the Adam optimizer.

mod adam;
mod checkpoint;
mod embed;
pub mod gradcheck;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use embed::{
    clamp_log_sigma, fourier_embed, fourier_features, kl_diag_gaussian, reparameterize, reparameterize_with,
    standard_normal, time_embeddings, LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use params::{kaiming_uniform, Conv1d, Linear, Mlp, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("backward needs a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    Degenerate(&'static str),
    #[error("parameter {0} already exists")]
    DuplicateParam(String),
    #[error("missing tensor {0}")]
    MissingParam(String),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
