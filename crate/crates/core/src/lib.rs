//! Transformer surrogate of a stirred 5x5 chemical oscillator grid.
//!
//! The crate covers the whole offline pipeline: recording ingestion and a
//! synthetic reference oscillator ([`data`]), the encoder-decoder world model
//! and its cyclic training ([`model`], [`train`]), autoregressive rollout and
//! phase-tolerant evaluation ([`rollout`], [`eval`]), and the three procedures
//! that use the trained surrogate: a genetic search for XOR-like motor
//! layouts ([`ga`]), a one-hidden-layer controller trained through the frozen
//! model ([`rl`]), and stride-1 tiling of the 5x5 model over larger fields
//! ([`upscale`]).

pub mod data;
pub mod error;
pub mod eval;
pub mod ga;
pub mod model;
pub mod nn;
pub mod rl;
pub mod rollout;
pub mod tensor;
pub mod tensorfile;
pub mod train;
pub mod upscale;

pub use error::{Error, Result};
pub use tensor::Mat;
