//! Batch reinforcement learning of backchannel timing from logged dyadic
//! interactions.

pub mod batch_rl;
pub mod config;
pub mod dataset;
pub mod engagement;
pub mod error;
pub mod features;
pub mod manifest;
pub mod ope;
pub mod pipeline;
pub mod qnet;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
