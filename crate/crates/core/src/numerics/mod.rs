//! Deterministic tensor core: flat row-major tensors, the handful of layers
//! the models compose, per-layer analytic backward passes, Adam, and the
//! PRNG every stochastic piece of the pipeline draws from.

pub mod activations;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod matmul;
pub mod rng;
pub mod tensor;

pub use activations::{
    relu, relu_backward, selu, selu_backward, sigmoid, sigmoid_backward, softmax_axis,
    softmax_backward_axis, SELU_ALPHA, SELU_LAMBDA,
};
pub use adam::{adam_step, adam_step_with};
pub use conv::{Conv1d, Conv2d, ConvTranspose2d};
pub use layers::{gap1d, gap1d_backward, gap2d, gap2d_backward, Linear};
pub use rng::Rng;
pub use tensor::{Parameter, Scalar, Tensor};
