//! Minimal dense tensor math, tape-based reverse-mode differentiation and
//! Adam. Double precision throughout.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{add, concat, l2_sq, matmul, relu, softmax, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EngineError {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("non-finite gradient for parameter {param} at element {index}: {value}")]
    NonFiniteGradient { param: usize, index: usize, value: f64 },
}
