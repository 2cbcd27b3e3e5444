//! The surrogate network: configuration, transformer, losses and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod positional;
pub mod transformer;

pub use checkpoint::Checkpoint;
pub use config::{ModelConfig, OutputActivation};
pub use loss::{mse, scaled_mse};
pub use positional::positional_encoding;
pub use transformer::{is_encoder_param, AttentionMaps, ForwardOutput, Mode, Transformer};
