//! Dense-numeric substrate: tensors, a fixed set of layers with hand-chained
//! backpropagation, cross-entropy, and SGD.

pub mod checkpoint;
mod layer;
mod network;
mod optim;
mod tensor;

pub use layer::Layer;
pub use network::{backward, finite_diff_check, GradientSet, Network, NetworkBuilder, Trace};
pub use optim::{sgd_step, Sgd};
pub use tensor::{argmax, cross_entropy, log_softmax_at, softmax, Tensor};
