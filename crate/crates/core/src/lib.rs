//! Multimodal time-series forecasting: retrieval-augmented patch memory,
//! series-to-image rendering, statistical text prompts, a pluggable frozen
//! vision-language encoder and gated cross-modal fusion, trained end to end
//! on a small reverse-mode differentiation engine.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod predictor;
pub mod ral;
pub mod tal;
pub mod tensor;
pub mod val;

pub use error::{Error, Result};
