//! Minimal reverse-mode automatic differentiation over rank-4
//! `(batch, channels, height, width)` tensors.
//!
//! A [`Graph`] records operations as they are applied to [`Var`] handles;
//! [`Graph::backward`] then sweeps the record in reverse to fill leaf
//! gradients. Tensors are immutable, so parameter updates produce new tensors.

mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use ops::conv::{conv_output_size, max_pool2d, SPARSE_CONV_EPS};
pub use ops::elementwise::LEAKY_RELU_SLOPE;
pub use ops::norm::{RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

/// Configures the worker pool used by data-parallel kernels.
///
/// Call once, before any kernel runs; later calls are ignored.
pub fn init_threads(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
}
