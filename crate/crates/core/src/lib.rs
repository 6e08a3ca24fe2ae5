//! Traffic-graph classification.
//!
//! Raw captures are purified into fixed 784-byte records, rendered as 28×28
//! grayscale traffic-graphs, and classified by a convolutional + recurrent
//! network. A three-way general classifier routes each graph to an IDS alert,
//! a port/DPI application label, or a six-way encrypted-traffic classifier.

pub mod dataset;
pub mod error;
pub mod framework;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod nn;

pub use error::{Error, Result};

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_200_805;
