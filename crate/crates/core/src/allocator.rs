//! Optimal per-server resource allocation for a fixed offloading matrix.
//!
//! Given which sub-tasks each server hosts this slot, the remaining
//! continuous variables decouple per server into three convex subproblems
//! with closed-form optima derived from KKT conditions:
//!
//! * bandwidth shares `y` — square-root weighting normalized over the
//!   server's assigned set;
//! * compute shares `β` on LMS/CubeSats — interior square-root solution, or
//!   a dual-variable solution found by binary search when the processor
//!   budget binds;
//! * dedicated CNS compute rates `ω` — a one-variable stationary point.
//!
//! A pruned exhaustive grid oracle over the same objectives is provided for
//! verification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{self, ComputeShare, LinkParams, BITS_PER_MB};
use crate::error::{Error, Result};
use crate::model::{
    coverage_windows, Satellite, SatelliteId, SatelliteLayer, Scenario, SubTask, SubTaskId,
};

/// Objective weights for service time (α₁) and price (α₂).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Weights {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if alpha1 <= 0.0 || alpha2 <= 0.0 {
            return Err(Error::domain("weights", "alphas must be positive"));
        }
        Ok(Weights { alpha1, alpha2 })
    }

    /// The balanced default.
    pub fn even() -> Self {
        Weights { alpha1: 0.5, alpha2: 0.5 }
    }
}

/// Allocation caps: `y ≤ y_th` and `β ≤ beta_th` per sub-task.
///
/// Defaults leave both inactive (`y_th = 1`, `beta_th = ϱ_b`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub y_th: f64,
    /// `None` means the server's processor count (never binding alone).
    pub beta_th: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { y_th: 1.0, beta_th: None }
    }
}

/// Binary offloading assignment for one decision slot.
///
/// Exactly one server per sub-task by construction; CubeSat single
/// occupancy is checked by [`OffloadMatrix::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OffloadMatrix {
    assignments: BTreeMap<SubTaskId, SatelliteId>,
}

impl OffloadMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, sub: SubTaskId, sat: SatelliteId) -> Result<()> {
        if self.assignments.insert(sub, sat).is_some() {
            return Err(Error::domain("offload_matrix", format!("{sub} assigned twice")));
        }
        Ok(())
    }

    pub fn server_of(&self, sub: SubTaskId) -> Option<SatelliteId> {
        self.assignments.get(&sub).copied()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubTaskId, SatelliteId)> + '_ {
        self.assignments.iter().map(|(s, b)| (*s, *b))
    }

    /// Sub-tasks grouped per server, in sub-task id order.
    pub fn by_server(&self) -> BTreeMap<SatelliteId, Vec<SubTaskId>> {
        let mut m: BTreeMap<SatelliteId, Vec<SubTaskId>> = BTreeMap::new();
        for (sub, sat) in &self.assignments {
            m.entry(*sat).or_default().push(*sub);
        }
        m
    }

    /// One server per sub-task holds by construction; CubeSats must host at
    /// most one sub-task per slot.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        for (sat, subs) in self.by_server() {
            if scenario.satellite(sat).layer == SatelliteLayer::CubeSat && subs.len() > 1 {
                return Err(Error::domain(
                    "offload_matrix",
                    format!("{sat} is a CubeSat hosting {} sub-tasks in one slot", subs.len()),
                ));
            }
        }
        Ok(())
    }
}

/// Per-sub-task inputs of the bandwidth subproblem.
#[derive(Debug, Clone)]
pub struct BandwidthItem {
    pub subtask: SubTaskId,
    pub memory_mb: f64,
    /// Number of sub-tasks in the parent task (‖d‖).
    pub task_size: usize,
    /// log₂(1 + p·g/N₀) of this sub-task's uplink.
    pub spectral_efficiency: f64,
}

/// Per-sub-task inputs of the LMS/CubeSat compute subproblem.
#[derive(Debug, Clone)]
pub struct ComputeItem {
    pub subtask: SubTaskId,
    pub compute_gigacycles: f64,
    pub task_size: usize,
}

#[derive(Debug, Clone)]
pub struct BandwidthAllocation {
    /// Shares in item order.
    pub y: Vec<f64>,
    /// KKT multiplier of the Σy ≤ 1 constraint.
    pub dual: f64,
    /// Value of the per-server objective at the solution.
    pub objective: f64,
    /// Items clipped by the `y_th` cap.
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct ComputeAllocation {
    pub beta: Vec<f64>,
    /// KKT multiplier ι_b of the Σβ ≤ ϱ constraint (0 when interior).
    pub iota: f64,
    pub objective: f64,
    pub clipped: usize,
}

/// Combined allocation over all servers of an offload matrix.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AllocationResult {
    pub y: BTreeMap<SubTaskId, f64>,
    pub beta: BTreeMap<SubTaskId, f64>,
    pub omega_cns: BTreeMap<SubTaskId, f64>,
    /// η restricted to the given matrix: Σ (α₁T^ser + α₂P^ser)/(‖d‖·‖D‖).
    pub objective: f64,
    /// Compute-capacity dual per server.
    pub dual_iota: BTreeMap<SatelliteId, f64>,
    /// Bandwidth dual per server.
    pub dual_bandwidth: BTreeMap<SatelliteId, f64>,
    /// Sub-tasks whose share was capped by a threshold.
    pub threshold_clips: usize,
}

/// ϑ weight of the bandwidth closed form, with the bit conversion and task
/// normalization kept consistent with the objective it minimizes.
fn bandwidth_theta(it: &BandwidthItem, bw_hz: f64, w: Weights, task_count: usize) -> f64 {
    w.alpha1 * it.memory_mb * BITS_PER_MB
        / (bw_hz * it.spectral_efficiency * it.task_size as f64 * task_count as f64)
}

/// The per-server bandwidth objective Σ α₁·T^tran/(‖d‖‖D‖).
pub fn bandwidth_objective(
    items: &[BandwidthItem],
    y: &[f64],
    bw_hz: f64,
    w: Weights,
    task_count: usize,
) -> f64 {
    items
        .iter()
        .zip(y)
        .map(|(it, &yd)| bandwidth_theta(it, bw_hz, w, task_count) / yd)
        .sum()
}

/// Closed-form optimal bandwidth shares on one server.
///
/// `y*_d = √ϑ_d / Σ√ϑ`, which uses the whole link and equalizes the
/// marginal transmission-time cost across the assigned set.
pub fn allocate_bandwidth(
    server: &Satellite,
    items: &[BandwidthItem],
    weights: Weights,
    task_count: usize,
    thresholds: Thresholds,
) -> Result<BandwidthAllocation> {
    if items.is_empty() {
        return Ok(BandwidthAllocation { y: Vec::new(), dual: 0.0, objective: 0.0, clipped: 0 });
    }
    let mut theta = Vec::with_capacity(items.len());
    for it in items {
        if it.spectral_efficiency <= 0.0 {
            return Err(Error::domain(
                "allocate_bandwidth",
                format!("{} has zero spectral efficiency", it.subtask),
            ));
        }
        theta.push(bandwidth_theta(it, server.bandwidth_hz, weights, task_count));
    }
    let roots: Vec<f64> = theta.iter().map(|t| t.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    let mut y: Vec<f64> = roots.iter().map(|r| r / total).collect();

    // C8 cap: clip violators to y_th and re-spread the freed budget over
    // the rest in proportion to their weights.
    let mut clipped = 0usize;
    if thresholds.y_th < 1.0 {
        clipped = clip_and_renormalize(&mut y, &roots, thresholds.y_th, 1.0);
    }

    let objective = bandwidth_objective(items, &y, server.bandwidth_hz, weights, task_count);
    Ok(BandwidthAllocation { y, dual: total * total, objective, clipped })
}

fn clip_and_renormalize(x: &mut [f64], weight: &[f64], cap: f64, budget: f64) -> usize {
    let mut fixed = vec![false; x.len()];
    loop {
        let mut violated = false;
        for (xi, fi) in x.iter_mut().zip(fixed.iter_mut()) {
            if !*fi && *xi > cap {
                *xi = cap;
                *fi = true;
                violated = true;
            }
        }
        if !violated {
            break;
        }
        let used: f64 = x.iter().zip(&fixed).filter(|(_, f)| **f).map(|(x, _)| *x).sum();
        let free_weight: f64 =
            weight.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(w, _)| *w).sum();
        if free_weight <= 0.0 {
            break;
        }
        let remaining = (budget - used).max(0.0);
        for ((xi, wi), fi) in x.iter_mut().zip(weight).zip(&fixed) {
            if !*fi {
                *xi = remaining * *wi / free_weight;
            }
        }
    }
    fixed.iter().filter(|f| **f).count()
}

/// The per-server compute objective Σ (α₁·ν/(βω) + α₂·χ·βω)/(‖d‖‖D‖).
pub fn compute_objective(
    items: &[ComputeItem],
    beta: &[f64],
    omega: f64,
    unit_price: f64,
    w: Weights,
    task_count: usize,
) -> f64 {
    items
        .iter()
        .zip(beta)
        .map(|(it, &b)| {
            let norm = it.task_size as f64 * task_count as f64;
            (w.alpha1 * it.compute_gigacycles / (b * omega) + w.alpha2 * unit_price * b * omega)
                / norm
        })
        .sum()
}

/// Closed-form optimal compute shares on an LMS or CubeSat.
///
/// Interior solution `β* = √(φ/Λ)` per sub-task when the pool is large
/// enough; otherwise the dual ι_b > 0 is found by binary search so the
/// shares exactly exhaust the processor budget. Returns the shares and ι_b.
pub fn allocate_compute(
    server: &Satellite,
    items: &[ComputeItem],
    weights: Weights,
    task_count: usize,
    thresholds: Thresholds,
) -> Result<ComputeAllocation> {
    if server.layer == SatelliteLayer::Cns {
        return Err(Error::domain("allocate_compute", "CNS uses dedicated power allocation"));
    }
    if items.is_empty() {
        return Ok(ComputeAllocation { beta: Vec::new(), iota: 0.0, objective: 0.0, clipped: 0 });
    }
    let omega = server.compute_per_processor_gcps;
    let chi = server.compute_unit_price;
    let cap = thresholds.beta_th.unwrap_or(server.processor_count).min(server.processor_count);

    let phi_lambda: Vec<(f64, f64)> = items
        .iter()
        .map(|it| {
            let norm = it.task_size as f64 * task_count as f64;
            let phi = weights.alpha1 * it.compute_gigacycles / (omega * norm);
            let lambda = weights.alpha2 * chi * omega / norm;
            (phi, lambda)
        })
        .collect();

    let solve = |iota: f64, active: &[bool]| -> Vec<f64> {
        phi_lambda
            .iter()
            .zip(active)
            .map(|(&(phi, lambda), &a)| if a { (phi / (lambda + iota)).sqrt() } else { 0.0 })
            .collect()
    };

    // Iterate because a β_th cap can re-bind after the dual solve.
    let mut active = vec![true; items.len()];
    let mut fixed_beta = vec![0.0f64; items.len()];
    let mut clipped = 0usize;
    loop {
        let budget = server.processor_count - fixed_beta.iter().sum::<f64>();
        let interior = solve(0.0, &active);
        let interior_sum: f64 = interior.iter().sum();
        let iota;
        let mut beta;
        if interior_sum <= budget {
            iota = 0.0;
            beta = interior;
        } else {
            iota = solve_compute_dual(&phi_lambda, &active, budget)?;
            beta = solve(iota, &active);
        }
        // Apply the per-share cap; capped items leave the active set. The
        // tolerance keeps dual-solve roundoff at the budget face from
        // masquerading as a cap violation.
        let mut newly_capped = false;
        for i in 0..beta.len() {
            if active[i] && beta[i] > cap * (1.0 + 1e-9) {
                beta[i] = cap;
                fixed_beta[i] = cap;
                active[i] = false;
                clipped += 1;
                newly_capped = true;
            }
        }
        if !newly_capped {
            for i in 0..beta.len() {
                if !active[i] {
                    beta[i] = fixed_beta[i];
                }
            }
            let objective =
                compute_objective(items, &beta, omega, chi, weights, task_count);
            return Ok(ComputeAllocation { beta, iota, objective, clipped });
        }
    }
}

/// Find ι_b > 0 with Σ√(φ/(Λ+ι)) = budget by bracketed bisection.
fn solve_compute_dual(phi_lambda: &[(f64, f64)], active: &[bool], budget: f64) -> Result<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 200;
    if budget <= 0.0 {
        return Err(Error::Numeric {
            op: "allocate_compute",
            msg: "no processor budget left for the dual solve".into(),
        });
    }
    let total = |iota: f64| -> f64 {
        phi_lambda
            .iter()
            .zip(active)
            .filter(|(_, a)| **a)
            .map(|(&(phi, lambda), _)| (phi / (lambda + iota)).sqrt())
            .sum()
    };
    let s0 = total(0.0);
    // Initial upper guess from the common-Λ inversion, then grown until the
    // residual changes sign.
    let lambda_max = phi_lambda
        .iter()
        .zip(active)
        .filter(|(_, a)| **a)
        .map(|(&(_, l), _)| l)
        .fold(0.0f64, f64::max);
    let mut hi = lambda_max * ((s0 / budget).powi(2) - 1.0) + 1.0;
    let mut grow = 0;
    while total(hi) > budget {
        hi *= 2.0;
        grow += 1;
        if grow > MAX_ITERS {
            return Err(Error::Numeric {
                op: "allocate_compute",
                msg: format!("dual bracket did not close: hi={hi:e}, sum={:e}", total(hi)),
            });
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let s = total(mid);
        if (s - budget).abs() <= TOL {
            return Ok(mid);
        }
        if s > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (total(mid) - budget).abs() <= 1e-9 {
        Ok(mid)
    } else {
        Err(Error::Numeric {
            op: "allocate_compute",
            msg: format!(
                "binary search did not converge: residual {:e} after {MAX_ITERS} iterations",
                total(mid) - budget
            ),
        })
    }
}

/// Closed-form dedicated CNS compute rate: ω* = √(α₁ν / (α₂χ_h)).
pub fn allocate_cns_power(nu_gigacycles: f64, weights: Weights, chi_h: f64) -> Result<f64> {
    if nu_gigacycles <= 0.0 || chi_h <= 0.0 || weights.alpha1 <= 0.0 || weights.alpha2 <= 0.0 {
        return Err(Error::domain(
            "allocate_cns_power",
            "demand, price and weights must be positive",
        ));
    }
    Ok((weights.alpha1 * nu_gigacycles / (weights.alpha2 * chi_h)).sqrt())
}

/// The CNS power objective Υ₁ = α₁·ν/ω + α₂·χ_h·ω.
pub fn cns_power_objective(nu: f64, omega: f64, chi_h: f64, w: Weights) -> f64 {
    w.alpha1 * nu / omega + w.alpha2 * chi_h * omega
}

/// Shares granted to one server's slot batch.
#[derive(Debug, Clone)]
pub struct BatchAllocation {
    /// (sub-task, bandwidth share, compute grant) per batch item.
    pub grants: Vec<(SubTaskId, f64, ComputeShare)>,
    pub iota: f64,
    pub bandwidth_dual: f64,
    pub clipped: usize,
}

/// Solve both per-server subproblems for the sub-tasks `batch` hosted on
/// `server` and return their shares.
pub fn allocate_batch(
    scenario: &Scenario,
    server: &Satellite,
    batch: &[&SubTask],
    weights: Weights,
    thresholds: Thresholds,
) -> Result<BatchAllocation> {
    let task_count = scenario.task_count().max(1);
    let noise = scenario.config.noise_mw;
    let bw_items: Vec<BandwidthItem> = batch
        .iter()
        .map(|st| {
            let link = LinkParams::for_link(server, scenario.cte(st.owner), noise);
            BandwidthItem {
                subtask: st.id,
                memory_mb: st.memory_mb,
                task_size: scenario.task_size(st),
                spectral_efficiency: link.spectral_efficiency(),
            }
        })
        .collect();
    let bw = allocate_bandwidth(server, &bw_items, weights, task_count, thresholds)?;

    let mut grants = Vec::with_capacity(batch.len());
    let mut iota = 0.0;
    let mut clipped = bw.clipped;
    if server.layer == SatelliteLayer::Cns {
        for (st, &y) in batch.iter().zip(&bw.y) {
            let omega =
                allocate_cns_power(st.compute_gigacycles, weights, server.compute_unit_price)?;
            grants.push((st.id, y, ComputeShare::Dedicated(omega)));
        }
    } else {
        let items: Vec<ComputeItem> = batch
            .iter()
            .map(|st| ComputeItem {
                subtask: st.id,
                compute_gigacycles: st.compute_gigacycles,
                task_size: scenario.task_size(st),
            })
            .collect();
        let comp = allocate_compute(server, &items, weights, task_count, thresholds)?;
        iota = comp.iota;
        clipped += comp.clipped;
        for ((st, &y), &beta) in batch.iter().zip(&bw.y).zip(&comp.beta) {
            grants.push((st.id, y, ComputeShare::Fraction(beta)));
        }
    }
    Ok(BatchAllocation { grants, iota, bandwidth_dual: bw.dual, clipped })
}

/// Solve every server's subproblems for a full offload matrix and compose
/// the restricted objective η(X).
pub fn allocate_all(
    scenario: &Scenario,
    matrix: &OffloadMatrix,
    weights: Weights,
) -> Result<AllocationResult> {
    allocate_all_with(scenario, matrix, weights, Thresholds::default(), None)
}

/// [`allocate_all`] with explicit thresholds and an optional precomputed
/// coverage check (satellite, cte) → has any window.
pub fn allocate_all_with(
    scenario: &Scenario,
    matrix: &OffloadMatrix,
    weights: Weights,
    thresholds: Thresholds,
    coverage_ok: Option<&dyn Fn(SatelliteId, crate::model::CteId) -> bool>,
) -> Result<AllocationResult> {
    matrix.validate(scenario)?;

    // Subtask lookup by id.
    let mut by_id: BTreeMap<SubTaskId, &SubTask> = BTreeMap::new();
    for st in scenario.subtasks() {
        by_id.insert(st.id, st);
    }

    // Default coverage check from full window computation.
    let windows;
    let check: Box<dyn Fn(SatelliteId, crate::model::CteId) -> bool> = match coverage_ok {
        Some(f) => Box::new(f),
        None => {
            windows = coverage_windows(scenario, scenario.config.horizon_slots);
            Box::new(move |sat, cte| {
                windows.iter().any(|w| w.satellite == sat && w.cte == cte)
            })
        }
    };

    let mut result = AllocationResult::default();
    for (sat_id, subs) in matrix.by_server() {
        let server = scenario.satellite(sat_id);
        let batch: Vec<&SubTask> = subs
            .iter()
            .map(|id| {
                by_id.get(id).copied().ok_or_else(|| {
                    Error::domain("allocate_all", format!("{id} not in scenario"))
                })
            })
            .collect::<Result<_>>()?;
        for st in &batch {
            if !check(sat_id, st.owner) {
                return Err(Error::NoCoverage {
                    subtask: st.id.to_string(),
                    satellite: sat_id.to_string(),
                });
            }
        }
        let alloc = allocate_batch(scenario, server, &batch, weights, thresholds)?;
        result.dual_iota.insert(sat_id, alloc.iota);
        result.dual_bandwidth.insert(sat_id, alloc.bandwidth_dual);
        result.threshold_clips += alloc.clipped;
        let task_count = scenario.task_count().max(1) as f64;
        for ((sub, y, share), st) in alloc.grants.into_iter().zip(&batch) {
            let link = LinkParams::for_link(server, scenario.cte(st.owner), scenario.config.noise_mw);
            let outcome = channel::service_outcome(st, server, &link, y, share)?;
            let norm = scenario.task_size(st) as f64 * task_count;
            result.objective +=
                (weights.alpha1 * outcome.t_ser_s() + weights.alpha2 * outcome.p_ser()) / norm;
            result.y.insert(sub, y);
            match share {
                ComputeShare::Fraction(b) => {
                    result.beta.insert(sub, b);
                }
                ComputeShare::Dedicated(om) => {
                    result.omega_cns.insert(sub, om);
                }
            }
        }
    }
    Ok(result)
}

/// One per-server subproblem instance for the grid oracle.
#[derive(Debug, Clone)]
pub enum ServerSubproblem {
    Bandwidth {
        bandwidth_hz: f64,
        items: Vec<BandwidthItem>,
        weights: Weights,
        task_count: usize,
    },
    Compute {
        omega_gcps: f64,
        unit_price: f64,
        capacity: f64,
        items: Vec<ComputeItem>,
        weights: Weights,
        task_count: usize,
    },
    CnsPower {
        nu_gigacycles: f64,
        chi_h: f64,
        weights: Weights,
    },
}

impl ServerSubproblem {
    fn variables(&self) -> usize {
        match self {
            ServerSubproblem::Bandwidth { items, .. } => items.len(),
            ServerSubproblem::Compute { items, .. } => items.len(),
            ServerSubproblem::CnsPower { .. } => 1,
        }
    }
}

/// Exhaustive grid search over the feasible box/simplex of one subproblem.
///
/// Verification-only: refuses more than 4 decision variables. Returns the
/// best grid point and its objective.
pub fn brute_force_oracle(problem: &ServerSubproblem, grid_step: f64) -> Result<(Vec<f64>, f64)> {
    if grid_step <= 0.0 {
        return Err(Error::domain("brute_force_oracle", "grid step must be positive"));
    }
    let n = problem.variables();
    if n == 0 {
        return Err(Error::OracleRefusal("empty instance has no feasible grid".into()));
    }
    if n > 4 {
        return Err(Error::OracleRefusal(format!("{n} variables exceed the oracle cap of 4")));
    }
    match problem {
        ServerSubproblem::Bandwidth { bandwidth_hz, items, weights, task_count } => {
            let theta: Vec<f64> = items
                .iter()
                .map(|it| bandwidth_theta(it, *bandwidth_hz, *weights, *task_count))
                .collect();
            grid_minimize(&theta_terms_bandwidth(&theta), 1.0, grid_step)
        }
        ServerSubproblem::Compute { omega_gcps, unit_price, capacity, items, weights, task_count } => {
            let terms: Vec<Box<dyn Fn(f64) -> f64>> = items
                .iter()
                .map(|it| {
                    let norm = it.task_size as f64 * *task_count as f64;
                    let a = weights.alpha1 * it.compute_gigacycles / (omega_gcps * norm);
                    let b = weights.alpha2 * unit_price * omega_gcps / norm;
                    Box::new(move |x: f64| a / x + b * x) as Box<dyn Fn(f64) -> f64>
                })
                .collect();
            grid_minimize(&terms, *capacity, grid_step)
        }
        ServerSubproblem::CnsPower { nu_gigacycles, chi_h, weights } => {
            let f = |omega: f64| cns_power_objective(*nu_gigacycles, omega, *chi_h, *weights);
            // Bracket the minimizer by doubling, then sweep the grid.
            let mut hi = grid_step.max(1.0);
            while f(2.0 * hi) < f(hi) {
                hi *= 2.0;
            }
            hi *= 2.0;
            let steps = (hi / grid_step).ceil() as u64;
            let mut best = (grid_step, f(grid_step));
            for k in 1..=steps {
                let omega = k as f64 * grid_step;
                let v = f(omega);
                if v < best.1 {
                    best = (omega, v);
                }
            }
            Ok((vec![best.0], best.1))
        }
    }
}

fn theta_terms_bandwidth(theta: &[f64]) -> Vec<Box<dyn Fn(f64) -> f64>> {
    theta
        .iter()
        .map(|&t| Box::new(move |y: f64| t / y) as Box<dyn Fn(f64) -> f64>)
        .collect()
}

/// Minimize Σ term_i(x_i) over the grid {step, 2·step, …} with Σx ≤ budget.
///
/// Exploits only separability and per-coordinate structure, never the
/// closed forms under test: if the independent per-coordinate grid minima
/// fit the budget they are the box optimum outright; otherwise moving any
/// single coordinate alone can still improve until the budget face, so the
/// search enumerates the face Σ units = ⌊budget/step⌋ with branch-and-bound
/// over precomputed per-coordinate value tables.
fn grid_minimize(
    terms: &[Box<dyn Fn(f64) -> f64>],
    budget: f64,
    step: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = terms.len();
    let max_units = (budget / step).floor() as usize;
    if max_units < n {
        return Err(Error::OracleRefusal(format!(
            "grid of step {step} has no feasible point for {n} variables within budget {budget}"
        )));
    }

    // values[i][k-1] = term_i(k·step) for k in 1..=max_units.
    let values: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| (1..=max_units).map(|k| t(k as f64 * step)).collect())
        .collect();

    // Independent minimizers; if they fit the budget, they are optimal.
    let solo: Vec<(usize, f64)> = values
        .iter()
        .map(|vs| {
            let (mut kb, mut vb) = (1usize, vs[0]);
            for (k, &v) in vs.iter().enumerate() {
                if v < vb {
                    vb = v;
                    kb = k + 1;
                }
            }
            (kb, vb)
        })
        .collect();
    let solo_units: usize = solo.iter().map(|(k, _)| *k).sum();
    if solo_units <= max_units {
        let best: Vec<f64> = solo.iter().map(|(k, _)| *k as f64 * step).collect();
        let val: f64 = solo.iter().map(|(_, v)| *v).sum();
        return Ok((best, val));
    }

    // Budget binds: enumerate Σ units = max_units. prefix_min[i][r] is the
    // best value coordinate i can reach using at most r+1 units.
    let prefix_min: Vec<Vec<f64>> = values
        .iter()
        .map(|vs| {
            let mut pm = vs.clone();
            for k in 1..pm.len() {
                pm[k] = pm[k].min(pm[k - 1]);
            }
            pm
        })
        .collect();

    // Incumbent: equal split on the face.
    let mut best = vec![0usize; n];
    let mut best_val;
    {
        let base = max_units / n;
        let mut rem = max_units - base * n;
        for (i, b) in best.iter_mut().enumerate() {
            *b = base + if i < rem { 1 } else { 0 };
        }
        rem = 0;
        let _ = rem;
        best_val = best.iter().enumerate().map(|(i, &k)| values[i][k - 1]).sum::<f64>();
    }

    struct Dfs<'a> {
        values: &'a [Vec<f64>],
        prefix_min: &'a [Vec<f64>],
        n: usize,
        best: Vec<usize>,
        best_val: f64,
        current: Vec<usize>,
    }

    impl Dfs<'_> {
        fn run(&mut self, i: usize, units_left: usize, partial: f64) {
            let remaining = self.n - i;
            if remaining == 1 {
                // Last coordinate takes the rest of the face.
                let v = partial + self.values[i][units_left - 1];
                if v < self.best_val {
                    self.best_val = v;
                    self.current[i] = units_left;
                    self.best = self.current.clone();
                }
                return;
            }
            // Each remaining coordinate takes at most this many units.
            let cap = units_left - (remaining - 1);
            let bound: f64 = (i..self.n).map(|j| self.prefix_min[j][cap - 1]).sum();
            if partial + bound >= self.best_val {
                return;
            }
            for k in 1..=cap {
                self.current[i] = k;
                self.run(i + 1, units_left - k, partial + self.values[i][k - 1]);
            }
            self.current[i] = 0;
        }
    }

    let mut dfs = Dfs {
        values: &values,
        prefix_min: &prefix_min,
        n,
        best: best.clone(),
        best_val,
        current: vec![0; n],
    };
    dfs.run(0, max_units, 0.0);
    best = dfs.best;
    best_val = dfs.best_val;

    let point: Vec<f64> = best.iter().map(|&k| k as f64 * step).collect();
    Ok((point, best_val))
}
