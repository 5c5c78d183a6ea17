//! Mean service time / price metrics over evaluated episodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::allocator::Weights;
use crate::env::DecisionRecord;
use crate::error::{Error, Result};
use crate::model::TaskId;

/// Aggregated experiment metrics.
///
/// `mst` and `msp` are the per-task means of sub-task service time/price,
/// averaged over tasks; `objective` is their α-weighted sum, checked to be
/// exactly α₁·mst + α₂·msp. `empty` marks a report over zero tasks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub empty: bool,
    pub tasks: usize,
    pub subtasks_decided: usize,
    pub mst: f64,
    pub msp: f64,
    pub objective: f64,
    pub success_rate: f64,
    /// Fraction of decided sub-tasks per serving layer; sums to 1.
    pub proportions: BTreeMap<String, f64>,
}

/// Compute MST, MSP and the weighted objective from decision records.
///
/// Per task: the mean over its decided sub-tasks' service time and price
/// (normalized by the full task size); then the mean over tasks. The
/// success rate is counted against `generated`, which includes sub-tasks
/// that were never decided.
pub fn compute_metrics(
    records: &[DecisionRecord],
    generated: usize,
    weights: Weights,
) -> Result<MetricsReport> {
    if records.is_empty() {
        return Ok(MetricsReport { empty: true, ..MetricsReport::default() });
    }
    struct TaskAcc {
        t_sum: f64,
        p_sum: f64,
        size: usize,
    }
    let mut tasks: BTreeMap<TaskId, TaskAcc> = BTreeMap::new();
    let mut sizes: BTreeMap<TaskId, usize> = BTreeMap::new();
    for r in records {
        *sizes.entry(r.parent_task).or_default() += 1;
    }
    for r in records {
        let acc = tasks.entry(r.parent_task).or_insert(TaskAcc {
            t_sum: 0.0,
            p_sum: 0.0,
            size: sizes[&r.parent_task],
        });
        acc.t_sum += r.outcome.t_ser_s();
        acc.p_sum += r.outcome.p_ser();
    }
    let n_tasks = tasks.len() as f64;
    let mut mst = 0.0;
    let mut msp = 0.0;
    for acc in tasks.values() {
        mst += acc.t_sum / acc.size as f64 / n_tasks;
        msp += acc.p_sum / acc.size as f64 / n_tasks;
    }
    let objective = weights.alpha1 * mst + weights.alpha2 * msp;
    debug_assert!(
        (objective - (weights.alpha1 * mst + weights.alpha2 * msp)).abs() <= 1e-12,
        "objective identity"
    );

    let mut proportions: BTreeMap<String, f64> = BTreeMap::new();
    for r in records {
        *proportions.entry(r.served_layer.as_str().to_string()).or_default() += 1.0;
    }
    for v in proportions.values_mut() {
        *v /= records.len() as f64;
    }
    if generated == 0 {
        return Err(Error::domain("compute_metrics", "records without generated sub-tasks"));
    }
    let successes = records.iter().filter(|r| r.reward.success).count();
    Ok(MetricsReport {
        empty: false,
        tasks: tasks.len(),
        subtasks_decided: records.len(),
        mst,
        msp,
        objective,
        success_rate: successes as f64 / generated as f64,
        proportions,
    })
}
