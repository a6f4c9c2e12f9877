//! Layers, parameter storage, initialization and the Adam optimizer.

mod adam;
mod layers;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Conv2d, ConvTranspose2d, LayerNorm, Linear, LAYER_NORM_EPS};
pub use params::{Bound, ParamBuilder, ParamId, ParamStore};
