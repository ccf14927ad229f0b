//! Vision models over the exact circuit simulator: dataset handling,
//! parameter management, forward/backward passes, training, and metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod net;
pub mod npz;
pub mod params;
pub mod train;

pub use error::{ModelError, Result};
