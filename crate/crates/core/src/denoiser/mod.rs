//! MLP epsilon-predictor with exact reverse-mode gradients.

mod checkpoint;
mod grads;
mod model;
pub mod tape;

pub use checkpoint::Checkpoint;
pub use grads::{
    gradient_variance, jacobian, mse_gradient, per_sample_gradients, vjp, GradientBundle, NoisyBatch,
    DEFAULT_JACOBIAN_BUDGET,
};
pub use model::{time_embedding, Architecture, DenoiserModel, LayerSlot, Preset, Trace};
