//! Reverse-mode automatic differentiation with double-backward support.

mod backward;
mod ops;
mod tensor;

pub use backward::{grad, hypergrad, inner_sgd, HypergradMode, InnerUpdate};
pub use tensor::{Graph, Tensor};
