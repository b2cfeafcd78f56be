//! Feed-forward layers, initialization, the AdamW optimizer and checkpoints.

mod adamw;
pub mod checkpoint;
mod mlp;
mod params;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use mlp::{glorot_linear, init_params, linear, mlp_forward, Activation, Mlp};
pub use params::{Gradients, ParamStore};
