//! Frame recommendation for interactive video object segmentation.
//!
//! A surrogate segmentation environment, a bidirectional-LSTM Q-network
//! trained with double DQN on decomposed rewards, baseline selection
//! policies and an evaluation harness.

pub mod episode;
pub mod error;
pub mod eval;
pub mod hash;
pub mod policies;
pub mod qnet;
pub mod reward;
pub mod sim;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

/// Version string recorded in reports and logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
