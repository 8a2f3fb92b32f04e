//! Minimal feed-forward engine: tensors, dense/ReLU/normalization layers and
//! their decoder mirrors, reconstruction loss, and ADAM.

mod adam;
pub mod gradcheck;
mod layers;
mod loss;
mod network;
mod tensor;

pub use adam::{adam_update, AdamState};
pub use layers::{
    relu_forward, Dense, Layer, LayerSpec, Mode, Moments, Norm, NormKind, NormReverse, BN_MOMENTUM,
    NORM_EPSILON,
};
pub use loss::{mse_loss, mse_loss_grad};
pub use network::{Network, Parameter};
pub use tensor::Tensor;
