//! Minimal reverse-mode automatic differentiation over dense row-major
//! arrays, with the fused operations the encoder-decoder models need.

mod graph;
mod scalar;
mod tensor;

pub use graph::{softmax_in_place, AttnMask, Grads, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
