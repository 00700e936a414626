//! Minimal dense numerics for small MLPs.
//!
//! Everything is generic over [`Real`] so that training runs in `f32` while
//! gradient checks run the exact same code paths in `f64`.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod ops;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_piecewise, relative_error};
pub use mlp::{
    mlp_backward, mlp_backward_with_input, mlp_forward, mlp_forward_head, Activations, HeadShape, LayerSpec,
    MlpArch, NetGrads, NetParams, OutputActivation,
};
pub use ops::{layer_norm, sigmoid, sigmoid_bound, LAYER_NORM_EPS};
pub use real::Real;
pub use tensor::Tensor;
