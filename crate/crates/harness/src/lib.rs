//! Experiment runner for the continual-learning laboratory: versioned TOML
//! configs, parallel (method × seed) jobs, result tables, significance
//! reports, curve data and ablation sweeps.

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod results;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, TaskOrder};
pub use error::{HarnessError, Result};
pub use run::{run_experiment, Completion, RunOptions, RunOutcome};
pub use sweep::{run_sweep, SweepAxis};
