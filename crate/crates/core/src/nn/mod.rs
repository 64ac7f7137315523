//! Minimal tensor and layer library with hand-written backward passes.
//!
//! Forward functions are pure. Backward functions read the upstream gradient
//! from `output.grad` and accumulate (`+=`) into the gradients of their inputs
//! and parameters, so callers zero gradients once per step.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod dense;
pub(crate) mod gemm;
mod gradcheck;
mod pool;
mod tensor;

pub use activation::{
    dropout, dropout_backward, relu, relu_backward, softmax, softmax_backward,
    softmax_cross_entropy, DropMask,
};
pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batchnorm::{BatchNorm, BnCache, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, conv2d_backward, conv2d_backward_params};
pub use dense::{dense, dense_backward, dense_backward_params};
pub use gradcheck::{grad_check, grad_check_at, weighted_sum, GradCheckReport, FD_STEP, REL_ERR_FLOOR};
pub use pool::{maxpool2, maxpool2_backward, Pooled};
pub use tensor::Tensor;

/// Whether stochastic layers sample (dropout) and batch norm uses batch
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
