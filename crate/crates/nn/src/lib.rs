//! Minimal CPU tensor engine with reverse-mode autodiff.
//!
//! Only the operations the visuotactile policy needs are provided: dense
//! layers, NHWC convolutions, layer norm, multi-head self-attention, token
//! stacking and a masked MSE loss. Everything is generic over [`Scalar`] so
//! the same network code runs in `f32` for training and `f64` for gradient
//! checks.

mod adam;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use adam::Adam;
pub use graph::{ConvGeom, Grads, Graph, NodeId};
pub use params::ParamStore;
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
