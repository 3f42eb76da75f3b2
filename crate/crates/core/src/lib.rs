//! Multi-domain graph recommendation: coordinator graphs, contrastive
//! pre-training, prompt transfer and ranking evaluation.

pub mod analysis;
pub mod config;
pub mod coordinator;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod pretrain;
pub mod propagation;
pub mod rng;
pub mod store;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
pub use linalg::{Mat, Real};
