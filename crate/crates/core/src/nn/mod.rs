//! Small dense numerical core: layers, activations, dropout, loss, Adam and
//! finite-difference gradient checking.
//!
//! Every model in the crate computes gradients with hand-written backward
//! functions; there is no general autodiff tape.

mod adam;
mod gradcheck;
mod layers;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_flat};
pub use layers::{
    dropout, glorot_uniform, leaky_relu, mse_loss, relu, sigmoid, DenseLayer, Dropout, Mode,
    LEAKY_SLOPE,
};
pub use params::{assign_flat, flatten, zeros_like, ParamSet};

pub use crate::tensor::Tensor2;
