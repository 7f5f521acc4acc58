//! Residual convolutional codec with interchangeable bottlenecks.

mod check;
mod model;
mod network;
mod params;
mod quantize;

pub use check::{check_model_gradients, codebook_gradient_norms, toy_config, ToyProblem, KINK_MARGIN};
pub use model::{BottleneckKind, BottleneckOut, Bound, Forward, Model, ModelConfig, Mode};
pub use params::ParamSet;
pub use quantize::{
    bottleneck_vae, nearest_codes, quantize_vqdiff, quantize_vqema_update, quantize_vqvae, EmaState,
    FrozenQuantization, VqOutput,
};
