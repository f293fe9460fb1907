//! Dense 64-bit float arrays with reverse-mode automatic differentiation.
//!
//! The op set is deliberately small: exactly what a one-layer CNN sentence
//! encoder plus cosine-similarity margin losses need. There is no
//! broadcasting; every shape alignment is explicit, which keeps the
//! correctness surface small and makes the finite-difference checks sharp.
//!
//! Nondifferentiable points are resolved deterministically:
//! [`Graph::hinge`] uses subgradient 0 at the kink, and [`Graph::max_over`]
//! routes the gradient to the first maximal input.

mod check;
mod graph;
mod tensor;

#[cfg(test)]
mod tests;

pub use check::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use tensor::{cosine_value, Tensor};

use thiserror::Error;

/// Errors raised by graph construction, backpropagation, and gradient checks.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("tensor shape {shape:?} implies {expected} elements, got {got}")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("cosine: {which} operand has zero norm")]
    ZeroNorm { which: &'static str },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    #[error("{op}: input list is empty")]
    EmptyInput { op: &'static str },

    #[error("{op}: index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("grad_check: step must be > 0, got {step}")]
    NonPositiveStep { step: f64 },
}
