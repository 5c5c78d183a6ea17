//! Experiment orchestration: configuration files, metric computation,
//! scheduler evaluation, sweep runners and artifact emission.

mod config;
mod manifest;
mod metrics;
mod run;
mod verify;

pub use config::{ExperimentConfig, Profile, SchedulerKind, SweepAxis};
pub use manifest::{config_hash, Manifest};
pub use metrics::{compute_metrics, MetricsReport};
pub use run::{
    alpha_tradeoff, evaluate_scheduler, run_sweep, write_allocation_csv, write_curves_csv,
    write_sweep_csv, write_trajectory_csv, EvalRun, SweepPoint, SweepResult,
};
pub use verify::{verify_allocator, VerifyReport};

use crate::error::Result;
use crate::model::Scenario;
use std::path::Path;

/// Scenario files are JSON with the same field names as the config schema.
pub fn save_scenario(path: &Path, scenario: &Scenario) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(scenario)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}
