//! Meta-learned unimodal labels for multimodal regression.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod meta;
pub mod metrics;
pub mod modality;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod textio;

pub use autodiff::{Graph, Tensor};
pub use error::{Error, Result};
pub use modality::Modality;
