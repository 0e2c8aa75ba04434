//! Multi-level multi-task attention RNN for rhythm discrimination and
//! per-sample episode localization on variable-length single-channel
//! signals, with segmentation, training, post-processing and scoring.

pub mod autodiff;
pub mod data;
mod error;
pub mod exec;
pub mod model;
pub mod pipeline;
pub mod postprocess;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
