//! Experiment runner: TOML configs in, CSV/JSON artifacts out.
//!
//! Verbs exposed by the `locb` binary map onto [`runner::run_experiment`],
//! [`sweep::run_sweep`], [`config::ExperimentConfig::load`] (validate) and
//! [`truth::write_truth`].

pub mod config;
pub mod error;
pub mod runner;
pub mod sweep;
pub mod truth;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use runner::{run_experiment, ExperimentReport, RunRecord};
pub use sweep::{run_sweep, SweepAxis};

/// Exit status when at least one run hit its round cap before terminating.
pub const EXIT_ROUND_CAP: i32 = 3;
