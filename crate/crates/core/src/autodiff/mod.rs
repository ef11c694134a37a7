//! Dense-network kernels: forward evaluation, reverse-mode parameter
//! gradients, forward-mode input Jacobians, Adam and ZMUV normalization.

mod adam;
mod dual;
mod mlp;
mod zmuv;

pub use adam::{AdamConfig, AdamState};
pub use dual::{Dual, Real};
pub use mlp::{
    Activation, ForwardCache, HalfSquaredError, Loss, MeanSquaredError, MlpNetwork,
    OutputActivation, CHECKPOINT_MAGIC, DEFAULT_LEAKY_SLOPE,
};
pub use zmuv::{ZmuvTransform, DEFAULT_STD_FLOOR};
