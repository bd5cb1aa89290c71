//! Minimal differentiable numeric core.
//!
//! The model is a fixed pipeline (conv stack → statistics pooling → affine,
//! plus projection heads), so backward passes are hand-derived per layer
//! rather than built on a general autodiff graph. Kernels are generic over
//! [`Real`], instantiated at `f32` for production and at `f64` inside the
//! finite-difference gradient checks.

mod encoder;
mod gradcheck;
mod layers;
mod optim;
mod real;
mod tensor;

pub use encoder::{ConvSpec, Encoder, EncoderCache, EncoderConfig, Linear};
pub use gradcheck::grad_check;
pub use layers::{
    gelu, gelu_grad, l2_normalize, l2_normalize_backward, linear_backward, linear_forward,
    log_softmax, softmax, stats_pool, stats_pool_backward, weight_norm_linear,
    weight_norm_linear_backward, Activation, STATS_POOL_EPS,
};
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use real::Real;
pub use tensor::Tensor;
