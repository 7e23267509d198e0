//! The searchable architecture space.

pub mod genome;
pub mod supernet;

pub use genome::{sample_uniform_genome, Choice, Genome};
pub use supernet::{fresh_subnet, path, MacroConfig, PathStep, Supernet, SupernetOptimizer};
