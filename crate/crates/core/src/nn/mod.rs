//! Differentiation tape, attention kernel, parameters and optimiser.

pub mod attention;
pub mod optim;
pub mod params;
pub mod tape;

pub use attention::{attention, causal_mask};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use params::ParamSet;
pub use tape::{AttnGeom, Grads, Tape, Var};
