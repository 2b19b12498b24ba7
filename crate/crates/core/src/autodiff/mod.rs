//! Reverse-mode automatic differentiation over a recorded graph.
//!
//! Backward passes are expressed with the same graph operations as forward
//! passes, so a gradient computed with `create_graph` can be differentiated
//! again. That is what the gradient penalties need: they are functions of
//! an input gradient and must be minimised over model parameters.

mod adam;
mod check;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use check::finite_diff_check;
pub use graph::{concat_rows, op_forward, Graph, OpKind, Var};
pub use tensor::Tensor;
