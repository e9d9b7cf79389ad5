//! Reverse-mode differentiable compute: dense f64 tensors, a recorded
//! op tape, transformer and LSTM building blocks, named parameters
//! with SGD/Adam updates, and the binary checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use graph::{categorical_sample, Gradients, Graph, NodeId};
pub use params::{Binding, Optimizer, Parameter, ParameterStore};
pub use tensor::Tensor;
