//! Minimal tensor and reverse-mode autodiff engine.
//!
//! Provides exactly what the restoration networks need: strided/transposed
//! convolutions via im2col + gemm, dense layers, elementwise ops, pooling,
//! softmax cross-entropy, an Adam optimizer, and a sequential/parallel
//! execution switch for batch-level fan-out.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod par;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use optim::Adam;
pub use par::Execution;
pub use params::{Gradients, Init, ParamId, ParamStore};
pub use scalar::{gemm, MatMut, MatRef, Scalar};
pub use tensor::Tensor;
