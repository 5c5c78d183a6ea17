//! Non-learning comparison schedulers: uniform-random offloading and the
//! whale optimization metaheuristic over relaxed decision vectors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::allocator::{allocate_batch, OffloadMatrix, Thresholds, Weights};
use crate::channel::{self, LinkParams};
use crate::env::{Env, PendingDecision};
use crate::error::{Error, Result};
use crate::model::{CoverageIndex, SatelliteId, SatelliteLayer, Scenario, SubTask, SubTaskId};
use crate::rng;

/// Menu entries of `sub`'s owner that satisfy `covered` and are not
/// CubeSats already occupied in `taken`.
fn feasible_choices(
    scenario: &Scenario,
    sub: &SubTask,
    taken: &[SatelliteId],
    covered: impl Fn(SatelliteId) -> bool,
) -> Vec<(usize, SatelliteId)> {
    let menu = &scenario.menus[sub.owner.0 as usize];
    menu.servers()
        .into_iter()
        .enumerate()
        .filter(|(_, sat)| {
            let s = scenario.satellite(*sat);
            let ok = s.layer == SatelliteLayer::Cns || covered(*sat);
            let free = s.layer != SatelliteLayer::CubeSat || !taken.contains(sat);
            ok && free
        })
        .collect()
}

/// Uniform random offloading over each sub-task's covering menu, with
/// CubeSat single occupancy enforced by rejection.
pub fn random_x(scenario: &Scenario, seed: u64) -> Result<OffloadMatrix> {
    let coverage = CoverageIndex::build(scenario, scenario.config.horizon_slots);
    let mut rng = rng::stream(seed, "random-x");
    let mut matrix = OffloadMatrix::new();
    let mut taken: Vec<SatelliteId> = Vec::new();
    for st in scenario.subtasks() {
        let choices =
            feasible_choices(scenario, st, &taken, |sat| coverage.has_any(sat, st.owner));
        if choices.is_empty() {
            return Err(Error::NoCoverage {
                subtask: st.id.to_string(),
                satellite: "<none available>".into(),
            });
        }
        let (_, sat) = choices[rng.gen_range(0..choices.len())];
        if scenario.satellite(sat).layer == SatelliteLayer::CubeSat {
            taken.push(sat);
        }
        matrix.assign(st.id, sat)?;
    }
    Ok(matrix)
}

/// Per-slot random policy for the episode loop: uniform over the currently
/// covered menu, avoiding CubeSats already picked this slot.
#[derive(Debug)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: rng::stream(seed, "random-policy") }
    }

    pub fn decide(
        &mut self,
        env: &Env<'_>,
        pending: &[PendingDecision],
    ) -> Result<Vec<(PendingDecision, usize)>> {
        let scenario = env.scenario;
        let mut taken: Vec<SatelliteId> = Vec::new();
        let mut out = Vec::with_capacity(pending.len());
        for d in pending {
            let mask = env.action_mask(d);
            let st = scenario.subtasks().find(|s| s.id == d.subtask).unwrap();
            let menu = scenario.menus[st.owner.0 as usize].servers();
            let valid: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter(|(i, m)| {
                    **m && (scenario.satellite(menu[*i]).layer != SatelliteLayer::CubeSat
                        || !taken.contains(&menu[*i]))
                })
                .map(|(i, _)| i)
                .collect();
            let pick = if valid.is_empty() {
                // Only occupied CubeSats cover right now; fall back to the
                // plain mask and accept the penalty.
                let any: Vec<usize> =
                    mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
                any[self.rng.gen_range(0..any.len())]
            } else {
                valid[self.rng.gen_range(0..valid.len())]
            };
            if scenario.satellite(menu[pick]).layer == SatelliteLayer::CubeSat {
                taken.push(menu[pick]);
            }
            out.push((*d, pick));
        }
        Ok(out)
    }
}

/// Whale optimization parameters.
#[derive(Debug, Clone, Copy)]
pub struct WoaParams {
    pub population: usize,
    /// Spiral shape constant b.
    pub spiral_b: f64,
    /// Evaluated generations, including the initial population.
    pub budget: usize,
}

impl Default for WoaParams {
    fn default() -> Self {
        WoaParams { population: 30, spiral_b: 1.0, budget: 50 }
    }
}

/// Population state of one WOA run over relaxed offloading vectors in
/// [0,1]^(items × menu).
#[derive(Debug, Clone)]
pub struct WoaState {
    pub population: Vec<Vec<f64>>,
    pub iteration: usize,
    pub best: Vec<f64>,
    pub best_objective: f64,
    /// Exploration scalar, decayed linearly 2 → 0.
    pub a: f64,
    pub spiral_b: f64,
}

/// Candidate decoding: per sub-task masked argmax over its menu block,
/// ties toward the lowest server id, CubeSat occupancy repaired by falling
/// through to the next-ranked entry.
fn decode(
    scenario: &Scenario,
    items: &[&SubTask],
    menu_len: usize,
    x: &[f64],
    covered: &dyn Fn(SatelliteId, &SubTask) -> bool,
) -> Vec<(SubTaskId, SatelliteId, usize)> {
    let mut taken: Vec<SatelliteId> = Vec::new();
    let mut out = Vec::with_capacity(items.len());
    for (i, st) in items.iter().enumerate() {
        let weightings = &x[i * menu_len..(i + 1) * menu_len];
        let mut ranked = feasible_choices(scenario, st, &taken, |sat| covered(sat, st));
        if ranked.is_empty() {
            // Nothing valid: fall back to the CNS entry.
            let menu = scenario.menus[st.owner.0 as usize].servers();
            out.push((st.id, *menu.last().unwrap(), menu.len() - 1));
            continue;
        }
        ranked.sort_by(|a, b| {
            weightings[b.0].partial_cmp(&weightings[a.0]).unwrap().then(a.1.cmp(&b.1))
        });
        let (idx, sat) = ranked[0];
        if scenario.satellite(sat).layer == SatelliteLayer::CubeSat {
            taken.push(sat);
        }
        out.push((st.id, sat, idx));
    }
    out
}

/// η restricted to one batch: closed-form shares per server, then the
/// weighted service cost normalized by task sizes.
fn batch_objective(
    scenario: &Scenario,
    assignment: &[(SubTaskId, SatelliteId, usize)],
    weights: Weights,
) -> Result<f64> {
    let mut by_server: std::collections::BTreeMap<SatelliteId, Vec<SubTaskId>> =
        Default::default();
    for (sub, sat, _) in assignment {
        by_server.entry(*sat).or_default().push(*sub);
    }
    let task_count = scenario.task_count().max(1) as f64;
    let mut total = 0.0;
    for (sat_id, subs) in by_server {
        let server = scenario.satellite(sat_id);
        let batch: Vec<&SubTask> = scenario.subtasks().filter(|s| subs.contains(&s.id)).collect();
        let alloc = allocate_batch(scenario, server, &batch, weights, Thresholds::default())?;
        for ((_, y, share), st) in alloc.grants.iter().zip(&batch) {
            let link =
                LinkParams::for_link(server, scenario.cte(st.owner), scenario.config.noise_mw);
            let out = channel::service_outcome(st, server, &link, *y, *share)?;
            total += (weights.alpha1 * out.t_ser_s() + weights.alpha2 * out.p_ser())
                / (scenario.task_size(st) as f64 * task_count);
        }
    }
    Ok(total)
}

/// Standard encircle/spiral/search loop; strictly elitist.
fn woa_optimize(
    scenario: &Scenario,
    items: &[&SubTask],
    weights: Weights,
    params: WoaParams,
    rng: &mut ChaCha8Rng,
    covered: &dyn Fn(SatelliteId, &SubTask) -> bool,
) -> Result<Vec<(SubTaskId, SatelliteId, usize)>> {
    if params.budget == 0 {
        return Err(Error::domain("woa_schedule", "iteration budget must be at least 1"));
    }
    let menu_len = scenario.menus.first().map(|m| m.len()).unwrap_or(5);
    let dim = items.len() * menu_len;
    let pop = params.population.max(2);

    let evaluate = |x: &[f64]| -> Result<f64> {
        let assignment = decode(scenario, items, menu_len, x, covered);
        batch_objective(scenario, &assignment, weights)
    };

    let mut state = WoaState {
        population: (0..pop)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect(),
        iteration: 0,
        best: Vec::new(),
        best_objective: f64::INFINITY,
        a: 2.0,
        spiral_b: params.spiral_b,
    };
    for candidate in &state.population {
        let obj = evaluate(candidate)?;
        if obj < state.best_objective {
            state.best_objective = obj;
            state.best = candidate.clone();
        }
    }

    for iter in 1..params.budget {
        state.iteration = iter;
        state.a = 2.0 * (1.0 - iter as f64 / (params.budget - 1).max(1) as f64);
        let best = state.best.clone();
        for w in 0..pop {
            let p: f64 = rng.gen_range(0.0..1.0);
            let r1: f64 = rng.gen_range(0.0..1.0);
            let r2: f64 = rng.gen_range(0.0..1.0);
            let a_coef = 2.0 * state.a * r1 - state.a;
            let c_coef = 2.0 * r2;
            let reference: Vec<f64> = if p < 0.5 && a_coef.abs() >= 1.0 {
                state.population[rng.gen_range(0..pop)].clone()
            } else {
                best.clone()
            };
            let l: f64 = rng.gen_range(-1.0..1.0);
            let xw = &mut state.population[w];
            for d in 0..dim {
                let new = if p < 0.5 {
                    let dist = (c_coef * reference[d] - xw[d]).abs();
                    reference[d] - a_coef * dist
                } else {
                    let dist = (best[d] - xw[d]).abs();
                    dist * (state.spiral_b * l).exp() * (std::f64::consts::TAU * l).cos()
                        + best[d]
                };
                xw[d] = new.clamp(0.0, 1.0);
            }
            let obj = evaluate(xw)?;
            if obj < state.best_objective {
                state.best_objective = obj;
                state.best = xw.clone();
            }
        }
    }
    Ok(decode(scenario, items, menu_len, &state.best, covered))
}

/// One-shot whale-optimized offloading matrix over every sub-task.
pub fn woa_schedule(scenario: &Scenario, budget: usize, seed: u64) -> Result<OffloadMatrix> {
    let coverage = CoverageIndex::build(scenario, scenario.config.horizon_slots);
    let mut rng = rng::stream(seed, "woa");
    let items: Vec<&SubTask> = scenario.subtasks().collect();
    if items.is_empty() {
        return Ok(OffloadMatrix::new());
    }
    let params = WoaParams { budget, ..WoaParams::default() };
    let covered = |sat: SatelliteId, st: &SubTask| coverage.has_any(sat, st.owner);
    let best = woa_optimize(scenario, &items, Weights::even(), params, &mut rng, &covered)?;
    let mut matrix = OffloadMatrix::new();
    for (sub, sat, _) in best {
        matrix.assign(sub, sat)?;
    }
    Ok(matrix)
}

/// Per-slot WOA policy: re-optimizes each decision slot's pending batch.
#[derive(Debug)]
pub struct WoaPolicy {
    pub params: WoaParams,
    pub weights: Weights,
    rng: ChaCha8Rng,
}

impl WoaPolicy {
    pub fn new(params: WoaParams, weights: Weights, seed: u64) -> Self {
        WoaPolicy { params, weights, rng: rng::stream(seed, "woa-policy") }
    }

    pub fn decide(
        &mut self,
        env: &Env<'_>,
        pending: &[PendingDecision],
    ) -> Result<Vec<(PendingDecision, usize)>> {
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let scenario = env.scenario;
        let items: Vec<&SubTask> = pending
            .iter()
            .map(|d| scenario.subtasks().find(|s| s.id == d.subtask).unwrap())
            .collect();
        let slot = env.slot();
        let coverage = env.coverage();
        let covered = |sat: SatelliteId, st: &SubTask| coverage.covers(sat, st.owner, slot);
        let best =
            woa_optimize(scenario, &items, self.weights, self.params, &mut self.rng, &covered)?;
        Ok(pending.iter().zip(best).map(|(d, (_, _, idx))| (*d, idx)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::allocate_all;
    use crate::model::{generate_scenario, ScenarioConfig};

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            cte_count: 8,
            task_count: 1,
            subtasks_per_task: 4,
            lms_count: 1,
            cubesat_count: 4,
            horizon_slots: 60,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn random_x_is_deterministic_and_valid() {
        let scenario = generate_scenario(&small(), 3).unwrap();
        let a = random_x(&scenario, 42).unwrap();
        let b = random_x(&scenario, 42).unwrap();
        assert_eq!(a, b);
        a.validate(&scenario).unwrap();
        assert_eq!(a.len(), scenario.subtask_count());
    }

    #[test]
    fn random_x_stays_on_menus() {
        let scenario = generate_scenario(&small(), 3).unwrap();
        let matrix = random_x(&scenario, 1).unwrap();
        for (sub, sat) in matrix.iter() {
            let st = scenario.subtasks().find(|s| s.id == sub).unwrap();
            let menu = scenario.menus[st.owner.0 as usize].servers();
            assert!(menu.contains(&sat));
        }
    }

    #[test]
    fn random_x_empirical_distribution_is_uniform() {
        // A single sub-task and no occupancy pressure: each covering menu
        // entry should be drawn uniformly over many seeds (binomial 3σ).
        let cfg = ScenarioConfig {
            cte_count: 1,
            task_count: 1,
            subtasks_per_task: 1,
            lms_count: 1,
            cubesat_count: 3,
            horizon_slots: 60,
            ..ScenarioConfig::default()
        };
        let scenario = generate_scenario(&cfg, 5).unwrap();
        let n = 20_000usize;
        let mut counts: std::collections::BTreeMap<SatelliteId, usize> = Default::default();
        for seed in 0..n {
            let m = random_x(&scenario, seed as u64).unwrap();
            let (_, sat) = m.iter().next().unwrap();
            *counts.entry(sat).or_default() += 1;
        }
        assert_eq!(counts.len(), 5, "all five menu entries should cover");
        let p = 1.0 / 5.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (sat, c) in counts {
            let dev = (c as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sigma, "{sat}: count {c} deviates {dev} > 3σ = {}", 3.0 * sigma);
        }
    }

    #[test]
    fn woa_is_deterministic_and_elitist() {
        let scenario = generate_scenario(&small(), 7).unwrap();
        let a = woa_schedule(&scenario, 20, 9).unwrap();
        let b = woa_schedule(&scenario, 20, 9).unwrap();
        assert_eq!(a, b);
        a.validate(&scenario).unwrap();

        // Elitism: a larger budget never yields a worse objective.
        let w = Weights::even();
        let short = woa_schedule(&scenario, 5, 9).unwrap();
        let long = woa_schedule(&scenario, 40, 9).unwrap();
        let obj_short = allocate_all(&scenario, &short, w).unwrap().objective;
        let obj_long = allocate_all(&scenario, &long, w).unwrap().objective;
        assert!(obj_long <= obj_short + 1e-12);
    }

    #[test]
    fn woa_budget_one_picks_best_of_initial_population() {
        let scenario = generate_scenario(&small(), 7).unwrap();
        let m = woa_schedule(&scenario, 1, 3).unwrap();
        m.validate(&scenario).unwrap();
        assert_eq!(m.len(), scenario.subtask_count());
        assert!(woa_schedule(&scenario, 0, 3).is_err());
    }

    #[test]
    fn woa_approaches_enumeration_optimum() {
        // 4 sub-tasks, menus of 5: enumerate every feasible matrix.
        let scenario = generate_scenario(&small(), 13).unwrap();
        let subs: Vec<&SubTask> = scenario.subtasks().collect();
        assert_eq!(subs.len(), 4);
        let coverage = CoverageIndex::build(&scenario, scenario.config.horizon_slots);
        let w = Weights::even();

        let menu_len = 5;
        let mut best = f64::INFINITY;
        let mut combo = [0usize; 4];
        'outer: loop {
            let mut taken: Vec<SatelliteId> = Vec::new();
            let mut assignment = Vec::new();
            let mut feasible = true;
            for (st, &c) in subs.iter().zip(&combo) {
                let menu = scenario.menus[st.owner.0 as usize].servers();
                let sat = menu[c];
                let s = scenario.satellite(sat);
                let ok = s.layer == SatelliteLayer::Cns || coverage.has_any(sat, st.owner);
                if !ok {
                    feasible = false;
                    break;
                }
                if s.layer == SatelliteLayer::CubeSat {
                    if taken.contains(&sat) {
                        feasible = false;
                        break;
                    }
                    taken.push(sat);
                }
                assignment.push((st.id, sat, c));
            }
            if feasible {
                let obj = batch_objective(&scenario, &assignment, w).unwrap();
                if obj < best {
                    best = obj;
                }
            }
            for i in 0..4 {
                combo[i] += 1;
                if combo[i] < menu_len {
                    continue 'outer;
                }
                combo[i] = 0;
            }
            break;
        }
        assert!(best.is_finite());

        let m = woa_schedule(&scenario, 2000, 1).unwrap();
        let woa_obj = allocate_all(&scenario, &m, w).unwrap().objective;
        assert!(
            woa_obj <= best * 1.05 + 1e-12,
            "WOA {woa_obj} vs enumeration optimum {best}"
        );
    }

    #[test]
    fn slot_policies_run_episodes() {
        use crate::env::{AllocatorHook, Env, EnvConfig};
        let scenario = generate_scenario(&small(), 17).unwrap();
        for which in ["random", "woa"] {
            let mut env = Env::new(&scenario, EnvConfig::default(), 3).unwrap();
            let mut rp = RandomPolicy::new(5);
            let mut wp = WoaPolicy::new(
                WoaParams { budget: 5, population: 6, ..WoaParams::default() },
                Weights::even(),
                5,
            );
            while !env.done() {
                let pending = env.decisions_for_slot();
                let actions = match which {
                    "random" => rp.decide(&env, &pending).unwrap(),
                    _ => wp.decide(&env, &pending).unwrap(),
                };
                env.step(&actions, &AllocatorHook::ClosedForm).unwrap();
            }
            let s = env.summary();
            assert_eq!(s.completed + s.failed, s.generated);
        }
    }
}
