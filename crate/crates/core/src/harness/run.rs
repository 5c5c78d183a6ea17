//! Scheduler evaluation and sweep runners.
//!
//! Learned schedulers are trained first, then evaluated greedily on fresh
//! seeded scenarios; WOA and Random evaluate directly. Sweep points run
//! independently (optionally in parallel; `SATMEC_WORKERS` bounds the
//! pool) and rows are keyed, never positional.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SchedulerKind, SweepAxis};
use super::metrics::{compute_metrics, MetricsReport};
use crate::baselines::{RandomPolicy, WoaPolicy};
use crate::channel::ComputeShare;
use crate::env::{AllocatorHook, DecisionRecord, Env, PendingDecision};
use crate::error::{Error, Result};
use crate::mappo::{self, EpisodeStats, LearnedPolicy};
use crate::model::{generate_scenario, Satellite, SatelliteLayer, SubTask, SubTaskId};
use crate::rng;

/// One scheduler evaluated on one seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRun {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub records: Vec<DecisionRecord>,
    /// Learning curves (learned schedulers only).
    pub curves: Vec<EpisodeStats>,
    pub train_aborted: Option<String>,
}

enum SlotPolicy {
    Learned(LearnedPolicy, bool),
    Woa(WoaPolicy),
    Random(RandomPolicy),
}

impl SlotPolicy {
    fn decide(
        &mut self,
        env: &Env<'_>,
        pending: &[PendingDecision],
    ) -> Result<(Vec<(PendingDecision, usize)>, BTreeMap<SubTaskId, (f64, f64)>)> {
        match self {
            SlotPolicy::Learned(p, _) => p.decide_full(env, pending),
            SlotPolicy::Woa(p) => Ok((p.decide(env, pending)?, BTreeMap::new())),
            SlotPolicy::Random(p) => Ok((p.decide(env, pending)?, BTreeMap::new())),
        }
    }

    fn uses_learned_allocations(&self) -> bool {
        matches!(self, SlotPolicy::Learned(_, true))
    }
}

/// Train (when applicable) and evaluate one scheduler under one seed.
pub fn evaluate_scheduler(
    cfg: &ExperimentConfig,
    scheduler: SchedulerKind,
    seed: u64,
) -> Result<EvalRun> {
    cfg.validate()?;
    let mut curves = Vec::new();
    let mut train_aborted = None;
    let mut policy = match scheduler {
        SchedulerKind::CoMappo | SchedulerKind::CcPpo => {
            let tc = cfg.train_config(scheduler, rng::derive_seed(seed, "train"));
            let out = mappo::train(tc)?;
            curves = out.report;
            train_aborted = out.aborted;
            SlotPolicy::Learned(out.trainer.policy(), cfg.ablation_no_convex)
        }
        SchedulerKind::Woa => SlotPolicy::Woa(WoaPolicy::new(
            cfg.woa_params(),
            cfg.weights(),
            rng::derive_seed(seed, "woa-eval"),
        )),
        SchedulerKind::Random => {
            SlotPolicy::Random(RandomPolicy::new(rng::derive_seed(seed, "random-eval")))
        }
    };

    let mut records: Vec<DecisionRecord> = Vec::new();
    let mut generated = 0usize;
    for ep in 0..cfg.eval_episodes {
        let scenario = generate_scenario(
            &cfg.scenario,
            rng::derive_seed(seed, &format!("eval-scenario-{ep}")),
        )?;
        let mut env = Env::new(
            &scenario,
            cfg.env_config(),
            rng::derive_seed(seed, &format!("eval-env-{ep}")),
        )?;
        while !env.done() {
            let pending = env.decisions_for_slot();
            let (actions, allocations) = policy.decide(&env, &pending)?;
            if policy.uses_learned_allocations() {
                let provided =
                    |server: &Satellite, batch: &[&SubTask]| -> Vec<(f64, ComputeShare)> {
                        batch
                            .iter()
                            .map(|st| {
                                let (y, c) =
                                    allocations.get(&st.id).copied().unwrap_or((0.5, 0.5));
                                let share = if server.layer == SatelliteLayer::Cns {
                                    ComputeShare::Dedicated(
                                        c * server.compute_per_processor_gcps,
                                    )
                                } else {
                                    ComputeShare::Fraction(c * server.processor_count)
                                };
                                (y, share)
                            })
                            .collect()
                    };
                env.step(&actions, &AllocatorHook::Provided(&provided))?;
            } else {
                env.step(&actions, &AllocatorHook::ClosedForm)?;
            }
        }
        let summary = env.summary();
        generated += summary.generated;
        records.extend(summary.records);
    }

    let metrics = compute_metrics(&records, generated.max(1), cfg.weights())?;
    Ok(EvalRun { scheduler, seed, metrics, records, curves, train_aborted })
}

/// One row of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub axis_value: String,
    pub axis_index: usize,
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub status: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Mean of a metric over seeds for one (axis index, scheduler) cell.
    pub fn mean_metric<F: Fn(&MetricsReport) -> f64>(
        &self,
        axis_index: usize,
        scheduler: SchedulerKind,
        f: F,
    ) -> Option<f64> {
        let vals: Vec<f64> = self
            .points
            .iter()
            .filter(|p| {
                p.axis_index == axis_index && p.scheduler == scheduler && p.status == "ok"
            })
            .map(|p| f(&p.metrics))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Build the per-point experiment config for one axis value.
pub fn point_config(cfg: &ExperimentConfig, axis: &SweepAxis, index: usize) -> ExperimentConfig {
    let mut point = cfg.clone();
    point.sweep = None;
    match axis {
        SweepAxis::SubtaskCount { values } => {
            let desk = (values[index] / cfg.subtask_scale_divisor).max(1);
            let per_task = cfg.scenario.subtasks_per_task.max(1);
            point.scenario.task_count = (desk / per_task).max(1);
        }
        SweepAxis::TaskMemory { ranges } => {
            point.scenario.task_memory_range_mb = ranges[index];
        }
        SweepAxis::ComputeDemand { ranges } => {
            point.scenario.task_compute_range_gigacycles = ranges[index];
        }
        SweepAxis::Alpha { alpha1_values } => {
            point.alpha1 = alpha1_values[index];
            point.alpha2 = 1.0 - alpha1_values[index];
        }
    }
    point
}

fn run_jobs(
    cfg: &ExperimentConfig,
    axis: &SweepAxis,
    schedulers: &[SchedulerKind],
) -> Vec<SweepPoint> {
    let jobs: Vec<(usize, SchedulerKind, u64)> = (0..axis.len())
        .flat_map(|i| {
            schedulers
                .iter()
                .flat_map(move |s| cfg.seeds.iter().map(move |seed| (i, *s, *seed)))
        })
        .collect();

    let run_one = |&(i, sched, seed): &(usize, SchedulerKind, u64)| -> SweepPoint {
        let point_cfg = point_config(cfg, axis, i);
        match evaluate_scheduler(&point_cfg, sched, seed) {
            Ok(run) => SweepPoint {
                axis: axis.name().to_string(),
                axis_value: axis.value_label(i),
                axis_index: i,
                scheduler: sched,
                seed,
                status: if run.train_aborted.is_some() { "aborted".into() } else { "ok".into() },
                metrics: run.metrics,
            },
            Err(e) => SweepPoint {
                axis: axis.name().to_string(),
                axis_value: axis.value_label(i),
                axis_index: i,
                scheduler: sched,
                seed,
                status: format!("failed: {e}"),
                metrics: MetricsReport::default(),
            },
        }
    };

    match worker_pool() {
        Some(pool) => pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(run_one).collect()
        }),
        None => jobs.iter().map(run_one).collect(),
    }
}

fn worker_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var("SATMEC_WORKERS").ok()?.parse().ok()?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().ok()
}

/// Run the configured sweep: every axis point × scheduler × seed.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let axis = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("config has no sweep axis".into()))?;
    if axis.is_empty() {
        return Err(Error::Config("sweep axis has no points".into()));
    }
    let schedulers = cfg.sweep_schedulers();
    let points = run_jobs(cfg, &axis, &schedulers);
    Ok(SweepResult { axis, points })
}

/// The α trade-off experiment: α₁ ∈ grid, α₂ = 1 − α₁, trained metrics per
/// point.
pub fn alpha_tradeoff(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let mut cfg = cfg.clone();
    if !matches!(cfg.sweep, Some(SweepAxis::Alpha { .. })) {
        cfg.sweep = Some(SweepAxis::Alpha { alpha1_values: vec![0.3, 0.5, 0.7] });
    }
    run_sweep(&cfg)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// CSV rows keyed by (axis_value, scheduler, seed).
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "axis,axis_value,scheduler,seed,status,mst,msp,objective,success_rate,\
         prop_cns,prop_lms,prop_cubesat,tasks,subtasks_decided"
    )?;
    for p in &result.points {
        let m = &p.metrics;
        let prop = |k: &str| m.proportions.get(k).copied().unwrap_or(0.0);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.axis,
            p.axis_value,
            p.scheduler.as_str(),
            p.seed,
            p.status.replace(',', ";"),
            fmt(m.mst),
            fmt(m.msp),
            fmt(m.objective),
            fmt(m.success_rate),
            fmt(prop("cns")),
            fmt(prop("lms")),
            fmt(prop("cubesat")),
            m.tasks,
            m.subtasks_decided,
        )?;
    }
    Ok(())
}

/// One row per decided sub-task of an evaluation.
pub fn write_trajectory_csv(records: &[DecisionRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "slot,agent,action,reward,t_ser,p_ser,success")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.slot,
            r.agent,
            r.action_index,
            fmt(r.reward.value),
            fmt(r.outcome.t_ser_s()),
            fmt(r.outcome.p_ser()),
            r.reward.success,
        )?;
    }
    Ok(())
}

/// Per-sub-task resource shares of one allocation solve.
pub fn write_allocation_csv(
    result: &crate::allocator::AllocationResult,
    path: &Path,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "subtask,y,beta,omega_cns")?;
    let mut subs: Vec<_> = result
        .y
        .keys()
        .chain(result.beta.keys())
        .chain(result.omega_cns.keys())
        .copied()
        .collect();
    subs.sort();
    subs.dedup();
    for sub in subs {
        let cell = |v: Option<&f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{}",
            sub.0,
            cell(result.y.get(&sub)),
            cell(result.beta.get(&sub)),
            cell(result.omega_cns.get(&sub)),
        )?;
    }
    Ok(())
}

/// One row per (episode, agent class) of a training run.
pub fn write_curves_csv(curves: &[EpisodeStats], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "episode,agent_class,cumulative_reward,policy_loss,value_loss,entropy")?;
    for ep in curves {
        for (class, reward) in &ep.reward_per_class {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                ep.episode,
                class,
                fmt(*reward),
                fmt(ep.policy_loss),
                fmt(ep.value_loss),
                fmt(ep.entropy),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScenarioConfig;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            scenario: ScenarioConfig {
                cte_count: 8,
                task_count: 2,
                lms_count: 1,
                cubesat_count: 3,
                horizon_slots: 60,
                ..ScenarioConfig::default()
            },
            episodes: Some(2),
            eval_episodes: 2,
            seeds: vec![1, 2],
            minibatch_size: 64,
            ppo_epochs: 2,
            woa_budget: 4,
            woa_population: 6,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn evaluate_runs_every_scheduler() {
        let cfg = tiny_config();
        for sched in SchedulerKind::ALL {
            let run = evaluate_scheduler(&cfg, sched, 3).unwrap();
            assert!(!run.metrics.empty, "{sched:?} produced no records");
            assert!(run.metrics.objective.is_finite());
            let prop_sum: f64 = run.metrics.proportions.values().sum();
            assert!((prop_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let cfg = tiny_config();
        let a = evaluate_scheduler(&cfg, SchedulerKind::Woa, 5).unwrap();
        let b = evaluate_scheduler(&cfg, SchedulerKind::Woa, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
    }

    #[test]
    fn single_point_sweep_equals_one_evaluation() {
        let mut cfg = tiny_config();
        cfg.seeds = vec![7];
        cfg.schedulers = Some(vec![SchedulerKind::Random]);
        cfg.sweep = Some(SweepAxis::Alpha { alpha1_values: vec![0.5] });
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.points.len(), 1);
        let direct = evaluate_scheduler(&cfg, SchedulerKind::Random, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&sweep.points[0].metrics).unwrap(),
            serde_json::to_string(&direct.metrics).unwrap()
        );
    }

    #[test]
    fn sweep_row_count_is_points_times_schedulers_times_seeds() {
        let mut cfg = tiny_config();
        cfg.schedulers = Some(vec![SchedulerKind::Random, SchedulerKind::Woa]);
        cfg.sweep = Some(SweepAxis::SubtaskCount { values: vec![100, 200, 300] });
        let sweep = run_sweep(&cfg).unwrap();
        assert_eq!(sweep.points.len(), 3 * 2 * 2);
    }

    #[test]
    fn subtask_axis_rescales_task_count() {
        let cfg = tiny_config();
        let axis = SweepAxis::SubtaskCount { values: vec![500, 1000] };
        let p0 = point_config(&cfg, &axis, 0);
        let p1 = point_config(&cfg, &axis, 1);
        // 500/10 = 50 sub-tasks → 10 tasks of 5; 1000/10 → 20 tasks.
        assert_eq!(p0.scenario.task_count, 10);
        assert_eq!(p1.scenario.task_count, 20);
    }

    #[test]
    fn alpha_point_matches_default_weights() {
        let cfg = tiny_config();
        let axis = SweepAxis::Alpha { alpha1_values: vec![0.3, 0.5, 0.7] };
        let p = point_config(&cfg, &axis, 1);
        assert_eq!(p.alpha1, 0.5);
        assert_eq!(p.alpha2, 0.5);
        assert_eq!(
            serde_json::to_string(&p.scenario).unwrap(),
            serde_json::to_string(&cfg.scenario).unwrap()
        );
    }

    #[test]
    fn csv_outputs_are_deterministic() {
        let cfg = tiny_config();
        let run = evaluate_scheduler(&cfg, SchedulerKind::Random, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_trajectory_csv(&run.records, &p1).unwrap();
        write_trajectory_csv(&run.records, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
