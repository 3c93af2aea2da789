//! Minimal reverse-mode differentiable array kernel.
//!
//! The kernel is deliberately small: dense n-dimensional arrays of `f64`,
//! a tape-based computation graph with the handful of operations a compact
//! convolutional classifier needs (2-D convolution, dense, layer norm, GELU,
//! softmax, L2 row normalization, reductions and a few loss-assembly
//! primitives), reverse-mode gradients, and an Adam optimizer with decoupled
//! weight decay.
//!
//! There is no broadcasting beyond bias addition, no dynamic shapes and no
//! operator fusion. Every differentiable operation is validated against
//! central finite differences (see [`gradcheck`]).

mod error;
mod graph;
mod optim;
mod tensor;

pub mod gradcheck;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use optim::{adam_step, AdamState};
pub use tensor::Tensor;
