//! Dense rank-2 tensors with a tape-based reverse-mode differentiator.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
pub use graph::{sigmoid, softmax_rows, Binary, Graph, Unary, Var};
pub use tensor::Tensor;
#[cfg(test)]
pub(crate) use tensor::gemm;
