//! Dense tensors, a reverse-mode differentiation tape, and the layer
//! primitives (convolution, pooling, normalization, attention building blocks,
//! losses) used by the segmentation and classification models.

mod error;
pub mod gradcases;
pub mod gradcheck;
pub mod init;
mod ops;
mod optim;
mod param;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use ops::{update_running_stats, Activation, BatchNormOutput, BatchStats};
pub use optim::{Adam, AdamConfig};
pub use param::{Bound, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Padding, Tape, Var};
pub use tensor::Tensor;

pub use ops::PROB_CLAMP;

/// Whether a forward pass updates normalization statistics and applies dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}
