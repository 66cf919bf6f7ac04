//! Agent network: parameters, features, forward passes and checkpoints.

pub mod checkpoint;
pub mod features;
pub mod model;
pub mod params;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use features::{encode, FeatureVector, RouteConditioning, FEATURE_LEN};
pub use model::{MixtureOutput, Network};
pub use params::{GradientAccumulator, ModelParams, NetConfig, ParamGroup};
