//! Iterative binary-code weight quantization with full-precision retraining,
//! magnitude pruning and a small character-level LSTM to retrain with.

pub mod bits;
pub mod bundle;
pub mod error;
pub mod pipeline;
pub mod prune;
pub mod quant;
pub mod scalar;
pub mod selftest;
pub mod tensor;
pub mod train;
mod wire;

pub use bits::Bitset;
pub use bundle::{load_model, save_model, ModelBundle};
pub use error::{Error, Result};
pub use quant::{dequantize, quantize_tensor, Method, QuantConfig, QuantizedTensor};
pub use scalar::Scalar;
pub use tensor::{sse, DenseMatrix};

/// Double-precision matrix, the working type of the pipeline.
pub type Matrix = DenseMatrix<f64>;
/// Single-precision matrix, the on-disk precision.
pub type Matrix32 = DenseMatrix<f32>;
pub type Bundle = ModelBundle<f64>;
pub type QTensor = QuantizedTensor<f64>;
