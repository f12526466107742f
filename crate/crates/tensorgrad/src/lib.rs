//! Dense CPU tensors with tape-based reverse-mode differentiation, plus the
//! handful of layers, an Adam optimizer and a checkpoint format needed to
//! train small convolutional generators and discriminators.

pub mod check;
mod error;
mod graph;
mod kernels;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, SpectralState};
pub use tensor::Tensor;
