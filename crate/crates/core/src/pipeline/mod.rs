//! End-to-end orchestration: configuration, training loops, run directories and commands.

pub mod commands;
pub mod config;
pub mod run;
pub mod train;

pub use commands::*;
pub use config::{DataConfig, PipelineConfig, Preset, SyntheticData};
pub use run::RunDir;
pub use train::{Budget, LossRow, SnnSettings};
