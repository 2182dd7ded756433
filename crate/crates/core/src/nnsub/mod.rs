//! Minimal differentiable-computation substrate.
//!
//! Provides fixed-shape tensors, eager layer kernels (convolution,
//! transposed convolution, dense, GRU, batch norm, activations, losses), a
//! tape-based reverse-mode [`Graph`], a [`ParamStore`] with Adam state, and
//! bit-exact checkpoints.

mod adam;
pub mod checkpoint;
mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use graph::{Graph, Var};
pub use kernels::ConvGeom;
pub use params::{ParamEntry, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
