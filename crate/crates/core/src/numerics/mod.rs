//! Dense tensor storage, matrix kernels, pointwise activations and the seeded
//! random source everything else is built on.
//!
//! Layout is row-major throughout. Image-like tensors are `[w, h, c]` with the
//! horizontal index outermost, matching the `(i, j)` patch-grid convention.

pub mod kernels;
mod rng;
mod scalar;
mod tensor;

pub use rng::{Rng, RngState};
pub use scalar::{DType, Scalar};
pub use tensor::{concat_last, matmul, pointwise, sigmoid, split_last, Activation, Tensor};
