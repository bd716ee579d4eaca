//! Dense tensors, the forward kernels of a small convolutional network, and
//! reverse-mode gradients over a recorded tape.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`). Gradient checks run
//! in `f64`; training may use `f32`.

pub mod adam;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod ops;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use init::he_normal;
pub use ops::{Activation, BinaryOp, Broadcast, ConvSpec};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
