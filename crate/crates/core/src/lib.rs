//! Adaptive frame-rate selection for chunked video streaming: trace model,
//! luminance features, QoE reward, chunk simulator, actor-critic training
//! and a decision service.

pub mod a3c;
pub mod env;
pub mod error;
pub mod features;
pub mod nn;
pub mod reward;
pub mod service;
pub mod trace;

pub use error::{Error, Result};
