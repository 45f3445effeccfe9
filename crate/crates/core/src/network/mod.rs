//! Encoder `f`, projector `h`, virtual-class classifier and the momentum key
//! network.

mod backbone;
mod layers;
mod model;
mod params;

pub use backbone::{Architecture, Backbone, SmallConv, Tape};
pub use layers::NORMALIZE_EPS;
pub use model::{momentum_update, momentum_update_layers, EncoderConfig, ModelPair, Network, ProjectorCache, CLASSIFIER, PROJECTOR};
pub use params::{Gradients, Param, ParamStore, Sgd};
