//! Minimal reverse-mode automatic differentiation.
//!
//! The layer set is exactly what the pose regressors need: dense, conv2d,
//! relu, max/global pooling, concat, and the handful of elementwise and
//! reduction ops the loss is built from. All math is `f64`; the forward pass
//! is deterministic, and parallel kernels are bit-identical to sequential
//! ones (see `kernels`).

mod adam;
mod kernels;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, Moments, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON};

#[doc(hidden)]
pub use kernels::{
    dense_backward_input as bench_dense_backward_input,
    dense_backward_weights as bench_dense_backward_weights, dense_forward as bench_dense_forward,
};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{Parameter, Tensor};
