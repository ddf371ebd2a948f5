//! Minimal neural-network substrate shared by the quantile networks and the
//! transformer classifier.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub(crate) mod dropout;
pub mod loss;
pub mod matrix;
pub mod mlp;
pub mod params;

pub use activation::{gelu, leaky_relu, sigmoid, DEFAULT_NEGATIVE_SLOPE};
pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{BatchNormState, Mode, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM};
pub use loss::{bce_loss, pinball_grad, pinball_loss};
pub use matrix::Matrix;
pub use mlp::{LayerKind, LayerSpec, Mlp, MlpSpec, Tape};
pub use params::{Gradients, ParameterSet};
