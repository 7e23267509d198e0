//! Hardware-aware architecture search for time-to-first-spike networks.

pub mod checkpoint;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod search;
pub mod space;
pub mod tensor;
pub mod ttfs;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, Scores};
pub use network::{Layer, Network};
pub use tensor::Tensor;
pub use ttfs::{QuantDescriptor, TtfsNetwork, Window};
