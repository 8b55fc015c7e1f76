//! Experiment harness for the `fedsmp-core` simulator: JSON configs, IDX
//! files, CSV metrics and the `fedsmp` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiment::{compute_experiment, run_experiment, Mode};
