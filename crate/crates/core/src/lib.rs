//! Amodal-aware video instance segmentation at desk scale.

pub mod autograd;
pub mod assignment;
pub mod error;
pub mod heads_loss;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod proto_update;
pub mod protomodel;
pub mod samh;
pub mod synthgen;
pub mod tensor;
pub mod visible_head;

pub use error::{Error, Result};
