//! Experiment runner for the `altmin` crate: configuration files, presets
//! and the `train`, `gridsearch`, `theory` and `gradcheck` commands.

pub mod config;
pub mod gradcheck;
pub mod gridsearch;
mod error;
pub mod presets;
pub mod settings;
pub mod theory_cmd;
pub mod train;

pub use error::{CliError, Result};
