//! The attention U-Net that predicts a soft mask from a log-magnitude
//! spectrogram patch.

mod config;
mod format;
mod params;
mod unet;

pub use config::UNetConfig;
pub use format::{load_model, load_model_bytes, save_model, save_model_bytes, MODEL_MAGIC, MODEL_VERSION};
pub use params::{count_parameters, init_params, layer_specs, ModelParams, TensorSpec};
pub use unet::{attention_gate, load_param_nodes, unet_forward, AttentionGateParams, ForwardMode, ForwardOutput, ParamNodes};
