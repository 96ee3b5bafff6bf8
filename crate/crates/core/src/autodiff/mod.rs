//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The primitive set is matmul, elementwise add and mul, sigmoid, tanh,
//! relu, exp, log, softmax, concat, slice and sum. Every layer in the crate
//! is composed from these so the finite-difference verifier covers all of
//! them.

mod check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_report, FdReport};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{Gradients, NamedParam, ParamId, ParamSet};
pub use tape::{log_softmax, sigmoid, softmax_in_place, Tape, Var};
pub use tensor::{dot, matvec, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("invalid tensor shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("finite-difference step must be positive, got {step}")]
    InvalidStep { step: f64 },
}
