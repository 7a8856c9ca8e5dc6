//! Minimal dense network substrate: tensors, a reverse-mode tape, optimizers,
//! a finite-difference gradient checker and the checkpoint format.

pub mod checkpoint;
pub mod graph;
pub mod gradcheck;
pub mod kernels;
pub mod optim;
pub mod param;
pub mod tensor;

pub use graph::{Graph, Var};
pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, GRAD_CHECK_STEP, GRAD_CHECK_TOLERANCE};
pub use kernels::Real;
pub use optim::{Optimizer, OptimizerKind};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::{affine_forward, bce_loss, relu, sigmoid, softmax, Tensor, PROB_EPS};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("label {value} is not 0 or 1")]
    InvalidLabel { value: f64 },
    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("optimizer state: {0}")]
    OptimizerState(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}
