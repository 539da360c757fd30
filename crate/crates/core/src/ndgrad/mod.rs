//! Dense `f64` tensors with define-by-run reverse-mode differentiation,
//! sized for multilayer perceptrons and input-gradient attacks.

mod check;
mod graph;
mod tensor;

pub use check::finite_diff_check;
pub use graph::{softmax, Graph, Var};
pub use tensor::Tensor;
