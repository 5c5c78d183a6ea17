//! Episodic decision environment.
//!
//! Sub-tasks queue up at reset and are decided slot by slot: every LMS and
//! CubeSat acts as an agent that, when it covers a waiting sub-task's
//! owner, picks the serving satellite from the owner's candidate menu.
//! Accepted assignments are granted bandwidth/compute shares by the
//! allocator hook, their service outcome is scored against the remaining
//! coverage-window time, and the agent is rewarded with the inverse
//! weighted service cost on success or a flat penalty on a miss.
//!
//! The engine is fully deterministic given (scenario, seed, actions).

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate_batch, Thresholds, Weights};
use crate::channel::{self, ComputeShare, LinkParams, ServiceOutcome};
use crate::error::{Error, Result};
use crate::model::{
    CoverageIndex, CteId, Satellite, SatelliteId, SatelliteLayer, Scenario, SubTask, SubTaskId,
    TaskId,
};
use crate::rng;

/// Feature scales keeping observations roughly in [0, 1].
mod norm {
    pub const MEMORY_MB: f64 = 100.0;
    pub const COMPUTE_GC: f64 = 100.0;
    pub const QUEUE_MB: f64 = 1000.0;
    pub const LOAD_MB: f64 = 1000.0;
    pub const BANDWIDTH_HZ: f64 = 1e9;
    pub const CAPACITY_GC: f64 = 1000.0;
    pub const WINDOW_S: f64 = 100.0;
}

/// Which per-server capacity feature the observation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapacityFeature {
    /// Pool capacity minus the average per-slot compute demand so far.
    RemainingCompute,
    /// The static pool capacity.
    TotalCompute,
}

/// Environment knobs on top of the scenario.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnvConfig {
    pub weights: Weights,
    /// Success reward scale Γ₁.
    pub gamma1: f64,
    /// Failure penalty Γ₂ (reward is −Γ₂).
    pub gamma2: f64,
    pub thresholds: Thresholds,
    pub capacity_feature: CapacityFeature,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            weights: Weights::even(),
            gamma1: 1.0,
            gamma2: 1.0,
            thresholds: Thresholds::default(),
            capacity_feature: CapacityFeature::RemainingCompute,
        }
    }
}

/// Per-agent observation; a fixed-width numeric vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub agent: SatelliteId,
    pub vector: Vec<f64>,
}

/// One-hot choice over the owner's candidate menu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentAction {
    pub one_hot: Vec<bool>,
}

impl AgentAction {
    pub fn from_index(index: usize, menu_len: usize) -> Self {
        let mut one_hot = vec![false; menu_len];
        one_hot[index] = true;
        AgentAction { one_hot }
    }

    pub fn index(&self) -> Result<usize> {
        let set: Vec<usize> =
            self.one_hot.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i).collect();
        if set.len() != 1 {
            return Err(Error::domain("agent_action", "exactly one entry must be set"));
        }
        Ok(set[0])
    }
}

/// Reward of one decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub value: f64,
    pub success: bool,
}

/// A sub-task waiting for a specific agent's decision this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingDecision {
    pub agent: SatelliteId,
    pub subtask: SubTaskId,
}

/// How step() turns accepted assignments into resource shares.
pub enum AllocatorHook<'h> {
    /// Stage-2 closed forms per server.
    ClosedForm,
    /// Learned or external continuous allocations; values are clipped to
    /// their boxes and renormalized onto the budget before use.
    Provided(&'h dyn Fn(&Satellite, &[&SubTask]) -> Vec<(f64, ComputeShare)>),
}

/// Everything recorded about one decided sub-task.
///
/// A sub-task that misses its deadline (or whose pick was invalid) is
/// re-served by the always-reachable CNS: `served` then names the CNS and
/// `outcome` carries the CNS fallback cost, while `target` keeps the
/// agent's original pick and the reward stays the penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub slot: u32,
    pub agent: SatelliteId,
    pub subtask: SubTaskId,
    pub parent_task: TaskId,
    pub owner: CteId,
    pub action_index: usize,
    pub target: SatelliteId,
    pub target_layer: SatelliteLayer,
    pub served: SatelliteId,
    pub served_layer: SatelliteLayer,
    pub memory_mb: f64,
    pub compute_gigacycles: f64,
    pub outcome: ServiceOutcome,
    pub reward: RewardRecord,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub slot: u32,
    pub decisions: Vec<DecisionRecord>,
    pub done: bool,
}

/// End-of-episode accounting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub generated: usize,
    pub completed: usize,
    pub failed: usize,
    /// Sub-tasks never decided before the horizon; counted as failed.
    pub expired: usize,
    pub records: Vec<DecisionRecord>,
}

/// Live POMDP state for one episode over a borrowed scenario.
pub struct Env<'s> {
    pub scenario: &'s Scenario,
    pub config: EnvConfig,
    coverage: CoverageIndex,
    agents: Vec<SatelliteId>,
    slot: u32,
    pending: VecDeque<SubTaskId>,
    mem_load_mb: Vec<f64>,
    compute_load_gc: Vec<f64>,
    records: Vec<DecisionRecord>,
    done: bool,
}

impl<'s> Env<'s> {
    /// Reset: queue every sub-task (order shuffled by `seed`), zero loads.
    pub fn new(scenario: &'s Scenario, config: EnvConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        let coverage = CoverageIndex::build(scenario, scenario.config.horizon_slots);
        let agents: Vec<SatelliteId> = scenario
            .satellites
            .iter()
            .filter(|s| s.layer != SatelliteLayer::Cns)
            .map(|s| s.id)
            .collect();
        let mut order: Vec<SubTaskId> = scenario.subtasks().map(|s| s.id).collect();
        order.shuffle(&mut rng::stream(seed, "env-arrivals"));
        let n_sat = scenario.satellites.len();
        let done = order.is_empty();
        Ok(Env {
            scenario,
            config,
            coverage,
            agents,
            slot: 0,
            pending: order.into(),
            mem_load_mb: vec![0.0; n_sat],
            compute_load_gc: vec![0.0; n_sat],
            records: Vec::new(),
            done,
        })
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn agents(&self) -> &[SatelliteId] {
        &self.agents
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn coverage(&self) -> &CoverageIndex {
        &self.coverage
    }

    /// Total queued memory M^tot.
    pub fn queued_memory_mb(&self) -> f64 {
        self.pending.iter().map(|id| self.subtask(*id).memory_mb).sum()
    }

    pub fn mem_load_mb(&self, sat: SatelliteId) -> f64 {
        self.mem_load_mb[sat.0 as usize]
    }

    fn subtask(&self, id: SubTaskId) -> &SubTask {
        self.scenario
            .subtasks()
            .find(|s| s.id == id)
            .expect("sub-task ids come from the scenario")
    }

    /// Match waiting sub-tasks to deciding agents for this slot.
    ///
    /// Walks the queue in order and gives each sub-task to the first
    /// currently-covering menu agent that is still free this slot; the
    /// agent scan order rotates with the slot so no satellite permanently
    /// shadows another. One decision per agent per slot.
    pub fn decisions_for_slot(&self) -> Vec<PendingDecision> {
        let mut free: Vec<SatelliteId> = self.agents.clone();
        if free.is_empty() {
            return Vec::new();
        }
        let rot = (self.slot as usize) % free.len();
        free.rotate_left(rot);
        let mut taken = vec![false; free.len()];
        let mut out = Vec::new();
        for &sub_id in &self.pending {
            let st = self.subtask(sub_id);
            let menu = &self.scenario.menus[st.owner.0 as usize];
            let menu_agents: Vec<SatelliteId> = menu
                .cubesats
                .iter()
                .copied()
                .chain(std::iter::once(menu.lms))
                .collect();
            let pick = free.iter().enumerate().find(|(i, sat)| {
                !taken[*i]
                    && menu_agents.contains(sat)
                    && self.coverage.covers(**sat, st.owner, self.slot)
            });
            if let Some((i, &agent)) = pick {
                taken[i] = true;
                out.push(PendingDecision { agent, subtask: sub_id });
                if out.len() == self.agents.len() {
                    break;
                }
            }
        }
        out
    }

    /// Fixed observation width for this scenario's menu size.
    pub fn observation_width(&self) -> usize {
        let menu_len = self.scenario.menus.first().map(|m| m.len()).unwrap_or(5);
        4 + 4 * menu_len
    }

    /// Observation of `agent`: the features of its assigned sub-task and
    /// the owner's menu, or all zeros when the agent has nothing to decide.
    pub fn observe(&self, agent: SatelliteId) -> Observation {
        let assigned = self.decisions_for_slot().into_iter().find(|d| d.agent == agent);
        match assigned {
            Some(d) => self.observe_decision(&d),
            None => Observation { agent, vector: vec![0.0; self.observation_width()] },
        }
    }

    /// Observation for a specific pending decision.
    pub fn observe_decision(&self, d: &PendingDecision) -> Observation {
        let st = self.subtask(d.subtask);
        let menu = &self.scenario.menus[st.owner.0 as usize];
        let mut v = Vec::with_capacity(self.observation_width());
        v.push(st.memory_mb / norm::MEMORY_MB);
        v.push(st.compute_gigacycles / norm::COMPUTE_GC);
        v.push(self.queued_memory_mb() / norm::QUEUE_MB);
        v.push(self.mem_load_mb[d.agent.0 as usize] / norm::LOAD_MB);
        for sat_id in menu.servers() {
            let sat = self.scenario.satellite(sat_id);
            let window = self.coverage.window_at(sat_id, st.owner, self.slot);
            let covered = window.is_some() || sat.layer == SatelliteLayer::Cns;
            v.push(if covered { 1.0 } else { 0.0 });
            let remaining = match window {
                Some(w) => w.remaining_s(self.slot, self.scenario.config.slot_s),
                None => 0.0,
            };
            v.push(remaining / norm::WINDOW_S);
            v.push(sat.bandwidth_hz / norm::BANDWIDTH_HZ);
            v.push(self.capacity_feature(sat) / norm::CAPACITY_GC);
        }
        Observation { agent: d.agent, vector: v }
    }

    fn capacity_feature(&self, sat: &Satellite) -> f64 {
        let pool = sat.processor_count * sat.compute_per_processor_gcps;
        match self.config.capacity_feature {
            CapacityFeature::TotalCompute => pool,
            CapacityFeature::RemainingCompute => {
                let avg = self.compute_load_gc[sat.id.0 as usize] / f64::from(self.slot + 1);
                (pool - avg).max(0.0)
            }
        }
    }

    /// Per-menu-entry validity for masking: CNS always, others only while
    /// covering the owner at this slot.
    pub fn action_mask(&self, d: &PendingDecision) -> Vec<bool> {
        let st = self.subtask(d.subtask);
        let menu = &self.scenario.menus[st.owner.0 as usize];
        menu.servers()
            .iter()
            .map(|&sat| {
                self.scenario.satellite(sat).layer == SatelliteLayer::Cns
                    || self.coverage.covers(sat, st.owner, self.slot)
            })
            .collect()
    }

    /// Apply one slot of joint actions.
    ///
    /// `actions` must contain exactly the pairs from
    /// [`Env::decisions_for_slot`] (any order), each with the chosen menu
    /// index.
    pub fn step(
        &mut self,
        actions: &[(PendingDecision, usize)],
        hook: &AllocatorHook<'_>,
    ) -> Result<StepReport> {
        if self.done {
            return Err(Error::domain("env_step", "episode already finished"));
        }
        let expected = self.decisions_for_slot();
        if actions.len() != expected.len()
            || !expected.iter().all(|e| actions.iter().any(|(d, _)| d == e))
        {
            return Err(Error::domain(
                "env_step",
                format!("expected actions for {} pending decisions", expected.len()),
            ));
        }

        // Resolve targets; apply CubeSat single-occupancy in queue order.
        struct Resolved {
            decision: PendingDecision,
            action_index: usize,
            target: SatelliteId,
            accepted: bool,
        }
        let ordered: Vec<(PendingDecision, usize)> = expected
            .iter()
            .map(|e| {
                let (_, idx) = actions.iter().find(|(d, _)| d == e).unwrap();
                (*e, *idx)
            })
            .collect();
        let mut cubesat_taken: Vec<SatelliteId> = Vec::new();
        let mut resolved = Vec::with_capacity(ordered.len());
        for (decision, action_index) in ordered {
            let st = self.subtask(decision.subtask);
            let menu = &self.scenario.menus[st.owner.0 as usize];
            let servers = menu.servers();
            if action_index >= servers.len() {
                return Err(Error::domain(
                    "env_step",
                    format!("action index {action_index} outside menu of {}", servers.len()),
                ));
            }
            let target = servers[action_index];
            let target_sat = self.scenario.satellite(target);
            let covered = target_sat.layer == SatelliteLayer::Cns
                || self.coverage.covers(target, st.owner, self.slot);
            let cube_free = target_sat.layer != SatelliteLayer::CubeSat
                || !cubesat_taken.contains(&target);
            let accepted = covered && cube_free;
            if accepted && target_sat.layer == SatelliteLayer::CubeSat {
                cubesat_taken.push(target);
            }
            resolved.push(Resolved { decision, action_index, target, accepted });
        }

        // Allocate shares per server over the accepted batches.
        let mut grants: std::collections::BTreeMap<SubTaskId, (f64, ComputeShare)> =
            std::collections::BTreeMap::new();
        let mut servers: Vec<SatelliteId> =
            resolved.iter().filter(|r| r.accepted).map(|r| r.target).collect();
        servers.sort();
        servers.dedup();
        for server_id in servers {
            let server = self.scenario.satellite(server_id);
            let batch: Vec<&SubTask> = resolved
                .iter()
                .filter(|r| r.accepted && r.target == server_id)
                .map(|r| self.subtask(r.decision.subtask))
                .collect();
            let shares: Vec<(f64, ComputeShare)> = match hook {
                AllocatorHook::ClosedForm => {
                    let alloc = allocate_batch(
                        self.scenario,
                        server,
                        &batch,
                        self.config.weights,
                        self.config.thresholds,
                    )?;
                    alloc.grants.into_iter().map(|(_, y, s)| (y, s)).collect()
                }
                AllocatorHook::Provided(f) => {
                    sanitize_provided(server, f(server, &batch), batch.len())
                }
            };
            for (st, share) in batch.iter().zip(shares) {
                grants.insert(st.id, share);
            }
        }

        // Score decisions, update loads, drop decided sub-tasks.
        let mut decisions = Vec::with_capacity(resolved.len());
        for r in resolved {
            let st = self.subtask(r.decision.subtask).clone();
            let server = self.scenario.satellite(r.target);
            let attempt = if r.accepted {
                let (y, share) = grants[&st.id];
                let link = LinkParams::for_link(
                    server,
                    self.scenario.cte(st.owner),
                    self.scenario.config.noise_mw,
                );
                let outcome = channel::service_outcome(&st, server, &link, y, share)?;
                let t_max = match self.coverage.window_at(r.target, st.owner, self.slot) {
                    Some(w) => w.remaining_s(self.slot, self.scenario.config.slot_s),
                    // CNS: connection persists through the horizon.
                    None => {
                        debug_assert_eq!(server.layer, SatelliteLayer::Cns);
                        f64::from(self.scenario.config.horizon_slots - self.slot)
                            * self.scenario.config.slot_s
                    }
                };
                (outcome.t_ser_s() <= t_max).then_some(outcome)
            } else {
                // Non-covered pick or CubeSat collision: treated as a miss.
                None
            };
            let w = self.config.weights;
            let (outcome, served, reward) = match attempt {
                Some(outcome) => {
                    let value = self.config.gamma1
                        / (w.alpha1 * outcome.t_ser_s() + w.alpha2 * outcome.p_ser());
                    (outcome, r.target, RewardRecord { value, success: true })
                }
                None => {
                    // A missed sub-task still has to be served: it falls
                    // back to the CNS, and the metric carries that cost.
                    let outcome = self.cns_fallback_outcome(&st)?;
                    let cns = self.scenario.menus[st.owner.0 as usize].cns;
                    (outcome, cns, RewardRecord { value: -self.config.gamma2, success: false })
                }
            };
            if r.accepted {
                self.mem_load_mb[r.target.0 as usize] += st.memory_mb;
                self.compute_load_gc[r.target.0 as usize] += st.compute_gigacycles;
            }
            self.pending.retain(|id| *id != st.id);
            decisions.push(DecisionRecord {
                slot: self.slot,
                agent: r.decision.agent,
                subtask: st.id,
                parent_task: st.parent_task,
                owner: st.owner,
                action_index: r.action_index,
                target: r.target,
                target_layer: server.layer,
                served,
                served_layer: self.scenario.satellite(served).layer,
                memory_mb: st.memory_mb,
                compute_gigacycles: st.compute_gigacycles,
                outcome,
                reward,
            });
        }

        self.records.extend(decisions.iter().cloned());
        self.slot += 1;
        self.done = self.pending.is_empty() || self.slot >= self.scenario.config.horizon_slots;
        Ok(StepReport { slot: self.slot - 1, decisions, done: self.done })
    }

    /// Deferred re-service of a missed sub-task on the CNS: full link
    /// share, dedicated compute at the closed-form rate.
    fn cns_fallback_outcome(&self, st: &SubTask) -> Result<channel::ServiceOutcome> {
        let cns = self.scenario.satellite(self.scenario.menus[st.owner.0 as usize].cns);
        let link =
            LinkParams::for_link(cns, self.scenario.cte(st.owner), self.scenario.config.noise_mw);
        let omega = crate::allocator::allocate_cns_power(
            st.compute_gigacycles,
            self.config.weights,
            cns.compute_unit_price,
        )?;
        channel::service_outcome(st, cns, &link, 1.0, ComputeShare::Dedicated(omega))
    }

    pub fn summary(&self) -> EpisodeSummary {
        let generated = self.scenario.subtask_count();
        let completed = self.records.iter().filter(|r| r.reward.success).count();
        let failed = self.records.len() - completed;
        EpisodeSummary {
            generated,
            completed,
            failed: failed + self.pending.len(),
            expired: self.pending.len(),
            records: self.records.clone(),
        }
    }
}

/// Clip out-of-box provided allocations and renormalize onto the budget.
fn sanitize_provided(
    server: &Satellite,
    mut shares: Vec<(f64, ComputeShare)>,
    n: usize,
) -> Vec<(f64, ComputeShare)> {
    shares.truncate(n);
    while shares.len() < n {
        shares.push((1.0 / n as f64, ComputeShare::Fraction(1.0 / n as f64)));
    }
    const FLOOR: f64 = 1e-6;
    let mut y_sum = 0.0;
    for (y, _) in &mut shares {
        *y = y.clamp(FLOOR, 1.0);
        y_sum += *y;
    }
    if y_sum > 1.0 {
        for (y, _) in &mut shares {
            *y /= y_sum;
        }
    }
    let mut beta_sum = 0.0;
    for (_, share) in &mut shares {
        match share {
            ComputeShare::Fraction(b) => {
                *b = b.clamp(FLOOR, server.processor_count);
                beta_sum += *b;
            }
            ComputeShare::Dedicated(om) => {
                *om = om.max(FLOOR);
            }
        }
    }
    if beta_sum > server.processor_count {
        let scale = server.processor_count / beta_sum;
        for (_, share) in &mut shares {
            if let ComputeShare::Fraction(b) = share {
                *b *= scale;
            }
        }
    }
    shares
}

/// Discounted return Σ_k γ^k·rewards[k].
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain("discounted_return", "gamma must lie in [0, 1)"));
    }
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}
