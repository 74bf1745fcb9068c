//! Image quality assessment with multimodal language models: sample selection,
//! prompt construction, model dispatch, rank aggregation and correlation metrics.

pub mod aggregate;
pub mod dataset;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod prompt;
pub mod sampler;

pub use error::{Error, Result};
