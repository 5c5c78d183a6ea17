//! Allocator-vs-oracle verification suite, callable from the CLI.
//!
//! Random per-server subproblem instances are solved by the closed forms
//! and by the exhaustive grid oracle; a pass requires the closed form to
//! reach the grid objective within resolution and to satisfy the KKT
//! stationarity conditions under finite differences.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    allocate_bandwidth, allocate_cns_power, allocate_compute, bandwidth_objective,
    brute_force_oracle, cns_power_objective, compute_objective, BandwidthItem, ComputeItem,
    ServerSubproblem, Thresholds, Weights,
};
use crate::error::Result;
use crate::model::{Satellite, SatelliteId, SatelliteLayer, SubTaskId};
use crate::rng;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub bandwidth_pass: usize,
    pub bandwidth_fail: usize,
    pub compute_pass: usize,
    pub compute_fail: usize,
    pub cns_pass: usize,
    pub cns_fail: usize,
    pub max_kkt_residual: f64,
    pub max_objective_gap: f64,
    pub elapsed_s: f64,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.bandwidth_fail == 0 && self.compute_fail == 0 && self.cns_fail == 0
    }
}

pub const GRID_STEP: f64 = 1e-3;
pub const KKT_TOLERANCE: f64 = 1e-8;

fn lms_like(omega: f64, price: f64, processors: f64) -> Satellite {
    Satellite {
        id: SatelliteId(1),
        layer: SatelliteLayer::Lms,
        altitude_km: 1000.0,
        bandwidth_hz: 200e6,
        compute_per_processor_gcps: omega,
        processor_count: processors,
        comm_unit_price: 0.12e-4,
        compute_unit_price: price,
        footprint_radius_km: Some(400.0),
    }
}

/// Run `instances` random instances per subproblem; sizes are drawn from
/// {1, 2, 3} with one forced 4-variable instance per family so the grid
/// stays tractable at the 1e-3 step.
pub fn verify_allocator(instances: usize, seed: u64) -> Result<VerifyReport> {
    let start = std::time::Instant::now();
    let mut rng = rng::stream(seed, "verify-allocator");
    let mut report = VerifyReport::default();

    for k in 0..instances {
        let n = if k == 0 { 4 } else { rng.gen_range(1..=3) };
        let w = random_weights(&mut rng);
        let task_count = rng.gen_range(1..=6);

        // Bandwidth instance.
        let items: Vec<BandwidthItem> = (0..n)
            .map(|i| BandwidthItem {
                subtask: SubTaskId(i as u32),
                memory_mb: rng.gen_range(10.0..90.0),
                task_size: rng.gen_range(1..=5),
                spectral_efficiency: rng.gen_range(5.0..30.0),
            })
            .collect();
        let server = lms_like(80.0, 0.3, 4.0);
        let alloc = allocate_bandwidth(&server, &items, w, task_count, Thresholds::default())?;
        let problem = ServerSubproblem::Bandwidth {
            bandwidth_hz: server.bandwidth_hz,
            items: items.clone(),
            weights: w,
            task_count,
        };
        let (_, grid_obj) = brute_force_oracle(&problem, GRID_STEP)?;
        let gap = alloc.objective - grid_obj;
        report.max_objective_gap = report.max_objective_gap.max(gap);
        let kkt = bandwidth_kkt_residual(&items, &alloc.y, alloc.dual, server.bandwidth_hz, w, task_count);
        report.max_kkt_residual = report.max_kkt_residual.max(kkt);
        if gap <= 1e-9 && kkt <= KKT_TOLERANCE {
            report.bandwidth_pass += 1;
        } else {
            report.bandwidth_fail += 1;
        }

        // Compute instance; capacities tight enough to exercise both branches.
        let omega = rng.gen_range(2.0..20.0);
        let price = rng.gen_range(0.05..0.5);
        let capacity = rng.gen_range(1.0..3.0);
        let server = lms_like(omega, price, capacity);
        let citems: Vec<ComputeItem> = (0..n)
            .map(|i| ComputeItem {
                subtask: SubTaskId(i as u32),
                compute_gigacycles: rng.gen_range(15.0..70.0),
                task_size: rng.gen_range(1..=5),
            })
            .collect();
        let calloc = allocate_compute(&server, &citems, w, task_count, Thresholds::default())?;
        let problem = ServerSubproblem::Compute {
            omega_gcps: omega,
            unit_price: price,
            capacity,
            items: citems.clone(),
            weights: w,
            task_count,
        };
        let (_, grid_obj) = brute_force_oracle(&problem, GRID_STEP)?;
        let gap = calloc.objective - grid_obj;
        report.max_objective_gap = report.max_objective_gap.max(gap);
        let kkt = compute_kkt_residual(&citems, &calloc.beta, calloc.iota, omega, price, w, task_count);
        report.max_kkt_residual = report.max_kkt_residual.max(kkt);
        let slack = calloc.iota * (calloc.beta.iter().sum::<f64>() - capacity);
        if gap <= 1e-9 && kkt <= KKT_TOLERANCE && slack.abs() <= 1e-8 {
            report.compute_pass += 1;
        } else {
            report.compute_fail += 1;
        }

        // CNS power instance (always one variable).
        let nu = rng.gen_range(15.0..70.0);
        let chi = rng.gen_range(1.0..20.0);
        let omega_star = allocate_cns_power(nu, w, chi)?;
        let obj = cns_power_objective(nu, omega_star, chi, w);
        let problem = ServerSubproblem::CnsPower { nu_gigacycles: nu, chi_h: chi, weights: w };
        let (_, grid_obj) = brute_force_oracle(&problem, GRID_STEP)?;
        let gap = obj - grid_obj;
        report.max_objective_gap = report.max_objective_gap.max(gap);
        // Stationarity of Υ₁ at ω*.
        let h = 1e-6 * omega_star.max(1.0);
        let d = (cns_power_objective(nu, omega_star + h, chi, w)
            - cns_power_objective(nu, omega_star - h, chi, w))
            / (2.0 * h);
        report.max_kkt_residual = report.max_kkt_residual.max(d.abs());
        if gap <= 1e-9 && d.abs() <= KKT_TOLERANCE {
            report.cns_pass += 1;
        } else {
            report.cns_fail += 1;
        }
    }
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn random_weights(rng: &mut impl Rng) -> Weights {
    let a1: f64 = rng.gen_range(0.1..0.9);
    Weights { alpha1: a1, alpha2: 1.0 - a1 }
}

/// max_d |∂Υ₂/∂y_d + ι| by central differences at the returned solution.
pub fn bandwidth_kkt_residual(
    items: &[BandwidthItem],
    y: &[f64],
    dual: f64,
    bandwidth_hz: f64,
    w: Weights,
    task_count: usize,
) -> f64 {
    let f = |y: &[f64]| bandwidth_objective(items, y, bandwidth_hz, w, task_count);
    let mut worst = 0.0f64;
    let h = 1e-7;
    for d in 0..items.len() {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[d] += h;
        ym[d] -= h;
        let grad = (f(&yp) - f(&ym)) / (2.0 * h);
        worst = worst.max((grad + dual).abs() / dual.abs().max(1.0));
    }
    worst
}

/// max_d |∂Υ₃/∂β_d + ι| by central differences at the returned solution.
pub fn compute_kkt_residual(
    items: &[ComputeItem],
    beta: &[f64],
    iota: f64,
    omega: f64,
    price: f64,
    w: Weights,
    task_count: usize,
) -> f64 {
    let f = |b: &[f64]| compute_objective(items, b, omega, price, w, task_count);
    let mut worst = 0.0f64;
    let h = 1e-7;
    for d in 0..items.len() {
        let mut bp = beta.to_vec();
        let mut bm = beta.to_vec();
        bp[d] += h;
        bm[d] -= h;
        let grad = (f(&bp) - f(&bm)) / (2.0 * h);
        worst = worst.max((grad + iota).abs() / iota.abs().max(1.0));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_verification_run_passes() {
        let report = verify_allocator(10, 1).unwrap();
        assert!(report.all_passed(), "{report:?}");
        assert!(report.max_kkt_residual <= KKT_TOLERANCE);
    }
}
