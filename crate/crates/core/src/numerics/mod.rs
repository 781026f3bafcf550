//! Dense 64-bit numeric core: tensors, affine layers, activations, dropout,
//! binary cross-entropy, Adam, and a reverse-mode tape over the operations
//! the graph model needs.

mod adam;
mod layer;
mod ops;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layer::{affine_forward, AffineLayer};
pub use ops::{
    activation, bce_loss, check_dropout_rate, dropout, dropout_mask, sigmoid, softmax, Activation,
    BCE_EPS, LEAKY_SLOPE,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{context}: expected extent {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{context}: lengths differ ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("softmax over an empty set of logits")]
    EmptySoftmax,
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidDropoutRate(f64),
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}
