//! Transmission and computation time/price of a sub-task on a server.
//!
//! All operations are pure. Units: data memory in MB (converted to bits at
//! 8·10⁶ bits/MB), compute demand in Gigacycles, compute rates in
//! Gigacycles/s, bandwidth in Hz, prices in $.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cte, Satellite, SatelliteLayer, SubTask};

/// Bits per MB used for transmission-time conversion.
pub const BITS_PER_MB: f64 = 8e6;

/// Convert a dB power ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Uplink parameters of one CTE→satellite wireless link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Full satellite bandwidth ζ_b, Hz.
    pub bandwidth_hz: f64,
    /// CTE transmit power p_μ, mW.
    pub tx_power_mw: f64,
    /// Channel gain, linear.
    pub gain_linear: f64,
    /// Noise power N₀, mW.
    pub noise_mw: f64,
}

impl LinkParams {
    pub fn for_link(sat: &Satellite, cte: &Cte, noise_mw: f64) -> Self {
        LinkParams {
            bandwidth_hz: sat.bandwidth_hz,
            tx_power_mw: cte.transmit_power_mw,
            gain_linear: db_to_linear(cte.channel_gain_db),
            noise_mw,
        }
    }

    /// Spectral efficiency log₂(1 + p·g/N₀), bits/s/Hz.
    pub fn spectral_efficiency(&self) -> f64 {
        (1.0 + self.tx_power_mw * self.gain_linear / self.noise_mw).log2()
    }
}

/// Compute resource granted to a sub-task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComputeShare {
    /// Fraction β of one processor pool on an LMS or CubeSat.
    Fraction(f64),
    /// Dedicated rate ω (Gigacycles/s) carved out of the CNS.
    Dedicated(f64),
}

/// Time and price of serving one sub-task on one server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceOutcome {
    pub t_tran_s: f64,
    pub t_comp_s: f64,
    pub p_tran: f64,
    pub p_comp: f64,
}

impl ServiceOutcome {
    /// Service time, the exact sum of the two components.
    pub fn t_ser_s(&self) -> f64 {
        self.t_tran_s + self.t_comp_s
    }

    /// Service price, the exact sum of the two components.
    pub fn p_ser(&self) -> f64 {
        self.p_tran + self.p_comp
    }
}

/// Time to push a sub-task's data over a `y_fraction` slice of the link.
pub fn transmission_time(subtask: &SubTask, link: &LinkParams, y_fraction: f64) -> Result<f64> {
    transmission_time_mb(subtask.memory_mb, link, y_fraction)
}

/// As [`transmission_time`] but on a raw memory value.
pub fn transmission_time_mb(memory_mb: f64, link: &LinkParams, y_fraction: f64) -> Result<f64> {
    if y_fraction <= 0.0 {
        return Err(Error::domain(
            "transmission_time",
            format!("bandwidth fraction must be positive, got {y_fraction}"),
        ));
    }
    let se = link.spectral_efficiency();
    if se <= 0.0 {
        return Err(Error::domain("transmission_time", "zero spectral efficiency"));
    }
    Ok(memory_mb * BITS_PER_MB / (y_fraction * link.bandwidth_hz * se))
}

/// Price of renting a `y_fraction` slice of the server's Ka-band link.
pub fn transmission_price(sat: &Satellite, y_fraction: f64) -> f64 {
    // Unit price times allocated bandwidth, as the pricing model defines it;
    // note the unit-price constants are quoted per MB.
    sat.comm_unit_price * y_fraction * sat.bandwidth_hz
}

/// Time to compute a sub-task on a β share of the server pool.
pub fn computation_time(subtask: &SubTask, sat: &Satellite, beta_share: f64) -> Result<f64> {
    if beta_share <= 0.0 {
        return Err(Error::domain(
            "computation_time",
            format!("compute share must be positive, got {beta_share}"),
        ));
    }
    Ok(subtask.compute_gigacycles / (beta_share * sat.compute_per_processor_gcps))
}

/// Price of renting a β share of the server pool.
pub fn computation_price(sat: &Satellite, beta_share: f64) -> f64 {
    sat.compute_unit_price * beta_share * sat.compute_per_processor_gcps
}

/// Full service outcome of a sub-task on a server.
///
/// LMS and CubeSats grant a β share of their pool; the CNS grants a
/// dedicated compute rate ω per sub-task, priced at χ_h·ω.
pub fn service_outcome(
    subtask: &SubTask,
    sat: &Satellite,
    link: &LinkParams,
    y_fraction: f64,
    share: ComputeShare,
) -> Result<ServiceOutcome> {
    let zero_load = subtask.memory_mb == 0.0 && subtask.compute_gigacycles == 0.0;
    if zero_load {
        return Ok(ServiceOutcome { t_tran_s: 0.0, t_comp_s: 0.0, p_tran: 0.0, p_comp: 0.0 });
    }
    let t_tran_s = if subtask.memory_mb == 0.0 {
        0.0
    } else {
        transmission_time(subtask, link, y_fraction)?
    };
    let p_tran = transmission_price(sat, y_fraction);
    let (t_comp_s, p_comp) = match share {
        ComputeShare::Fraction(beta) => {
            debug_assert_ne!(sat.layer, SatelliteLayer::Cns, "CNS uses dedicated power");
            (computation_time(subtask, sat, beta)?, computation_price(sat, beta))
        }
        ComputeShare::Dedicated(omega) => {
            if omega <= 0.0 {
                return Err(Error::domain("service_outcome", "dedicated rate must be positive"));
            }
            (subtask.compute_gigacycles / omega, sat.compute_unit_price * omega)
        }
    };
    Ok(ServiceOutcome { t_tran_s, t_comp_s, p_tran, p_comp })
}
