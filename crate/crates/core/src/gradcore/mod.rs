//! Dense tensors, reverse-mode autodiff and the Adam optimizer.

mod adam;
pub mod conv;
pub mod gradcheck;
mod graph;
mod real;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
pub use graph::{
    l1_loss, relu, softmax_slice, AffineMap, Gradients, Graph, NodeId, Param, ParamId,
    ParamStore,
};
pub use real::Real;
pub use tensor::Tensor;

/// Softmax of a real vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    softmax_slice(logits)
}
