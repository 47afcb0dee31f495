//! Reverse-mode automatic differentiation with the operator set the
//! trainers need: dense and convolutional layers, pooling, dropout,
//! softmax cross-entropy, and gradient reversal.

mod adam;
mod element;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use element::Element;
pub use graph::{Gradients, Graph, Mode, NodeId, Padding, Targets};
pub use tensor::Tensor;
