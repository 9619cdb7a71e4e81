//! Tensors, reverse-mode differentiation, parameters and optimization.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod real;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{ParamBuilder, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
