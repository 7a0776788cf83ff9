//! Config-driven experiment runner for `fragctl`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod emit;
pub mod error;
pub mod experiment;
pub mod presets;

pub use config::{ExperimentConfig, ExperimentKind, Overrides};
pub use error::CliError;
pub use experiment::{run, run_path, RunSummary};
