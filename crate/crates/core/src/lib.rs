//! Stereo-matching inference engine with bilateral cost aggregation.
//!
//! The crate covers the full forward pipeline (feature extraction,
//! correlation volume, attention-gated aggregation, disparity regression
//! and convex upsampling) together with evaluation metrics, MAC
//! accounting, benchmarking and gradient checks for the volume operators.

pub mod analysis;
pub mod diffcheck;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod volume;

pub use error::{Error, FormatError, Result};
pub use model::{forward, init_random, AttentionMode, ForwardOutput, Model, ModelConfig, Variant, WeightStore};
pub use tensor::{Shape, Tensor};
