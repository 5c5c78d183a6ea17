//! Domain model of the three-layer satellite network.
//!
//! Holds the satellite/CTE/task entities, circular-orbit motion, footprint
//! coverage windows over a flat square service region, and seeded random
//! scenario generation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Earth mass in kg.
pub const EARTH_MASS_KG: f64 = 5.9722e24;
/// Gravitational constant in N·m²/kg².
pub const GRAVITATIONAL_CONSTANT: f64 = 6.67e-11;

/// The three compute layers, ordered by capacity and rental price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SatelliteLayer {
    /// GEO core network server.
    Cns,
    /// LEO satellite-based MEC server.
    Lms,
    /// Nanosatellite MEC server.
    CubeSat,
}

impl SatelliteLayer {
    pub fn as_str(self) -> &'static str {
        match self {
            SatelliteLayer::Cns => "cns",
            SatelliteLayer::Lms => "lms",
            SatelliteLayer::CubeSat => "cubesat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SatelliteId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CteId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubTaskId(pub u32);

impl std::fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sat{}", self.0)
    }
}

impl std::fmt::Display for SubTaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "subtask{}", self.0)
    }
}

/// One server node of the network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Satellite {
    pub id: SatelliteId,
    pub layer: SatelliteLayer,
    pub altitude_km: f64,
    /// Wireless connection bandwidth ζ_b in Hz.
    pub bandwidth_hz: f64,
    /// Compute rate of one processor ω_b in Gigacycles/s.
    pub compute_per_processor_gcps: f64,
    /// Number of processors ϱ_b; the compute-share budget per slot.
    pub processor_count: f64,
    /// Ka-band link unit price χ^tran in $/MB.
    pub comm_unit_price: f64,
    /// Compute rental unit price χ^comp in $/Gigacycle.
    pub compute_unit_price: f64,
    /// Footprint radius on the region plane; `None` means the footprint
    /// always contains the whole region (CNS).
    pub footprint_radius_km: Option<f64>,
}

/// Crowd-sourced transportation entity: holds sub-task data in the region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cte {
    pub id: CteId,
    /// Position in the square service region, km.
    pub position_km: [f64; 2],
    /// Total data memory cached for its sub-tasks, MB.
    pub cached_memory_mb: f64,
    pub transmit_power_mw: f64,
    pub channel_gain_db: f64,
}

/// One offloadable unit of a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubTask {
    pub parent_task: TaskId,
    pub id: SubTaskId,
    pub owner: CteId,
    pub memory_mb: f64,
    pub compute_gigacycles: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub subtasks: Vec<SubTask>,
}

impl Task {
    /// Task memory is the sum of sub-task memories.
    pub fn memory_mb(&self) -> f64 {
        self.subtasks.iter().map(|s| s.memory_mb).sum()
    }
}

/// Interval of slots during which a satellite footprint contains a CTE.
///
/// `start_slot..=end_slot` inclusive; `t_max_s` is the window length times
/// the slot length, the maximum connection time available at window start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageWindow {
    pub satellite: SatelliteId,
    pub cte: CteId,
    pub start_slot: u32,
    pub end_slot: u32,
    pub t_max_s: f64,
}

impl CoverageWindow {
    pub fn contains_slot(&self, slot: u32) -> bool {
        self.start_slot <= slot && slot <= self.end_slot
    }

    /// Connection time still available when deciding at `slot`.
    pub fn remaining_s(&self, slot: u32, slot_s: f64) -> f64 {
        debug_assert!(self.contains_slot(slot));
        f64::from(self.end_slot - slot + 1) * slot_s
    }
}

/// Straight ground track of a moving satellite over the region plane.
///
/// The sub-satellite point moves at constant ground speed along `direction`
/// and wraps after one full ground-track circumference (2π·R_E), which
/// models the periodic re-entry of a circular orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTrack {
    /// Unit direction of motion.
    pub direction: [f64; 2],
    /// Point in the region the track passes through.
    pub ref_point_km: [f64; 2],
    /// Sub-satellite point speed, km/s.
    pub ground_speed_km_s: f64,
    /// Time (s) at which the sub-satellite point crosses `ref_point_km`.
    pub ref_time_s: f64,
    /// Track circumference (km) after which the pass repeats.
    pub wrap_km: f64,
}

/// Fixed per-CTE menu of candidate servers: `m` CubeSats, one LMS, one CNS.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateMenu {
    pub cubesats: Vec<SatelliteId>,
    pub lms: SatelliteId,
    pub cns: SatelliteId,
}

impl CandidateMenu {
    /// Menu entries in action order: CubeSats, then LMS, then CNS.
    pub fn servers(&self) -> Vec<SatelliteId> {
        let mut v = self.cubesats.clone();
        v.push(self.lms);
        v.push(self.cns);
        v
    }

    pub fn len(&self) -> usize {
        self.cubesats.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Scenario generation parameters; field names mirror the config schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Service region area, km².
    pub region_area_km2: f64,
    pub cns_count: u32,
    pub lms_count: u32,
    pub cubesat_count: u32,
    pub cte_count: u32,
    /// Draw the CTE count from Poisson(cte_count) instead of using it
    /// exactly (HPPP realization with E[N] = cte_count).
    pub poisson_cte_count: bool,
    pub task_count: u32,
    pub subtasks_per_task: u32,
    /// Required data memory per sub-task, drawn uniformly from this range (MB).
    pub task_memory_range_mb: [f64; 2],
    /// Required compute per sub-task (Gigacycles), coupled monotonically to
    /// the memory draw so that larger sub-tasks always demand more cycles.
    pub task_compute_range_gigacycles: [f64; 2],
    pub cns_altitude_km: f64,
    pub lms_altitude_km: f64,
    pub cubesat_altitude_km: f64,
    pub cns_bandwidth_hz: f64,
    pub lms_bandwidth_hz: f64,
    pub cubesat_bandwidth_hz: f64,
    pub cns_compute_gcps: f64,
    pub lms_compute_gcps: f64,
    pub cubesat_compute_gcps: f64,
    pub cns_processors: f64,
    pub lms_processors: f64,
    pub cubesat_processors: f64,
    /// Compute rental unit prices, $/Gigacycle; must be ordered CNS > LMS > CubeSat.
    pub cns_compute_price: f64,
    pub lms_compute_price: f64,
    pub cubesat_compute_price: f64,
    /// Ka-band unit offloading prices, $/MB.
    pub cns_comm_price: f64,
    pub lms_comm_price: f64,
    pub cubesat_comm_price: f64,
    pub cte_power_mw: f64,
    pub channel_gain_db: f64,
    pub noise_mw: f64,
    /// LMS footprint radius on the region plane, km.
    pub lms_footprint_radius_km: f64,
    pub cubesat_footprint_radius_km: f64,
    pub slot_s: f64,
    pub horizon_slots: u32,
    /// Pass midpoints of moving satellites are staggered uniformly over
    /// this fraction of the horizon.
    pub pass_stagger_fraction: f64,
    /// CubeSat entries per CTE menu (m).
    pub menu_cubesats: u32,
    /// Every CTE must see at least this many CubeSats during the horizon.
    pub min_cubesats_in_range: u32,
    pub max_generation_attempts: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            region_area_km2: 500.0,
            cns_count: 1,
            lms_count: 5,
            cubesat_count: 25,
            cte_count: 500,
            poisson_cte_count: false,
            task_count: 20,
            subtasks_per_task: 5,
            task_memory_range_mb: [10.0, 90.0],
            task_compute_range_gigacycles: [15.0, 70.0],
            cns_altitude_km: 35786.0,
            lms_altitude_km: 1000.0,
            cubesat_altitude_km: 200.0,
            // Table value as printed; 1 GHz is the physically plausible
            // alternate and can be set here when CNS uplinks matter.
            cns_bandwidth_hz: 1e3,
            lms_bandwidth_hz: 200e6,
            cubesat_bandwidth_hz: 40e6,
            cns_compute_gcps: 500.0,
            lms_compute_gcps: 80.0,
            cubesat_compute_gcps: 10.0,
            cns_processors: 16.0,
            lms_processors: 4.0,
            cubesat_processors: 1.0,
            cns_compute_price: 10.0,
            lms_compute_price: 0.3,
            cubesat_compute_price: 0.08,
            cns_comm_price: 0.30e-4,
            lms_comm_price: 0.12e-4,
            cubesat_comm_price: 0.08e-4,
            cte_power_mw: 150.0,
            channel_gain_db: 5.0,
            noise_mw: 1e-5,
            lms_footprint_radius_km: 400.0,
            cubesat_footprint_radius_km: 150.0,
            slot_s: 1.0,
            horizon_slots: 240,
            pass_stagger_fraction: 0.5,
            menu_cubesats: 3,
            min_cubesats_in_range: 3,
            max_generation_attempts: 32,
        }
    }
}

impl ScenarioConfig {
    pub fn region_side_km(&self) -> f64 {
        self.region_area_km2.sqrt()
    }

    pub fn horizon_s(&self) -> f64 {
        f64::from(self.horizon_slots) * self.slot_s
    }

    fn check(&self) -> Result<()> {
        if self.region_area_km2 <= 0.0 {
            return Err(Error::Config("region_area_km2 must be positive".into()));
        }
        if self.cns_count == 0 {
            return Err(Error::Config("at least one CNS is required".into()));
        }
        if self.slot_s <= 0.0 || self.horizon_slots == 0 {
            return Err(Error::Config("slot_s and horizon_slots must be positive".into()));
        }
        let ord = self.cns_compute_price > self.lms_compute_price
            && self.lms_compute_price > self.cubesat_compute_price;
        if !ord {
            return Err(Error::Config(
                "compute unit prices must satisfy CNS > LMS > CubeSat".into(),
            ));
        }
        for (name, r) in [
            ("task_memory_range_mb", self.task_memory_range_mb),
            ("task_compute_range_gigacycles", self.task_compute_range_gigacycles),
        ] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                return Err(Error::Config(format!("{name} must be a positive range")));
            }
        }
        Ok(())
    }
}

/// A fully generated network instance. Immutable after generation; safe to
/// share read-only across workers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub satellites: Vec<Satellite>,
    pub ctes: Vec<Cte>,
    pub tasks: Vec<Task>,
    /// Ground track per satellite index; `None` for CNS (always overhead).
    pub tracks: Vec<Option<GroundTrack>>,
    /// Candidate-server menu per CTE index.
    pub menus: Vec<CandidateMenu>,
}

impl Scenario {
    pub fn satellite(&self, id: SatelliteId) -> &Satellite {
        &self.satellites[id.0 as usize]
    }

    pub fn cte(&self, id: CteId) -> &Cte {
        &self.ctes[id.0 as usize]
    }

    pub fn subtasks(&self) -> impl Iterator<Item = &SubTask> {
        self.tasks.iter().flat_map(|t| t.subtasks.iter())
    }

    pub fn subtask_count(&self) -> usize {
        self.tasks.iter().map(|t| t.subtasks.len()).sum()
    }

    /// Number of sub-tasks in the parent task of `sub` (‖d‖).
    pub fn task_size(&self, sub: &SubTask) -> usize {
        self.tasks[sub.parent_task.0 as usize].subtasks.len()
    }

    /// Total number of tasks (‖D‖).
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.check()?;
        for sat in &self.satellites {
            if sat.bandwidth_hz <= 0.0
                || sat.compute_per_processor_gcps <= 0.0
                || sat.processor_count < 1.0
                || sat.comm_unit_price <= 0.0
                || sat.compute_unit_price <= 0.0
            {
                return Err(Error::Config(format!(
                    "satellite {} has a non-positive physical parameter",
                    sat.id
                )));
            }
        }
        let side = self.config.region_side_km();
        for cte in &self.ctes {
            if cte.transmit_power_mw <= 0.0 {
                return Err(Error::Config(format!("cte{} transmit power", cte.id.0)));
            }
            if !(0.0..=side).contains(&cte.position_km[0])
                || !(0.0..=side).contains(&cte.position_km[1])
            {
                return Err(Error::Config(format!("cte{} outside region", cte.id.0)));
            }
        }
        for t in &self.tasks {
            for s in &t.subtasks {
                if s.memory_mb <= 0.0 || s.compute_gigacycles <= 0.0 {
                    return Err(Error::Config(format!("{} has non-positive demand", s.id)));
                }
            }
        }
        Ok(())
    }
}

/// Windows indexed by (satellite, CTE) for slot-time queries.
#[derive(Debug, Clone, Default)]
pub struct CoverageIndex {
    map: std::collections::HashMap<(SatelliteId, CteId), Vec<CoverageWindow>>,
}

impl CoverageIndex {
    pub fn build(scenario: &Scenario, horizon_slots: u32) -> Self {
        let mut map: std::collections::HashMap<_, Vec<CoverageWindow>> =
            std::collections::HashMap::new();
        for w in coverage_windows(scenario, horizon_slots) {
            map.entry((w.satellite, w.cte)).or_default().push(w);
        }
        CoverageIndex { map }
    }

    /// The window containing `slot`, if the satellite covers the CTE then.
    pub fn window_at(&self, sat: SatelliteId, cte: CteId, slot: u32) -> Option<&CoverageWindow> {
        self.map.get(&(sat, cte))?.iter().find(|w| w.contains_slot(slot))
    }

    pub fn covers(&self, sat: SatelliteId, cte: CteId, slot: u32) -> bool {
        self.window_at(sat, cte, slot).is_some()
    }

    /// Whether the pair has any window at all over the horizon.
    pub fn has_any(&self, sat: SatelliteId, cte: CteId) -> bool {
        self.map.get(&(sat, cte)).is_some_and(|ws| !ws.is_empty())
    }
}

/// Orbit radius from the Earth's center for a satellite at `altitude_km`.
pub fn orbital_radius(altitude_km: f64) -> Result<f64> {
    if altitude_km < 0.0 {
        return Err(Error::domain("orbital_radius", "altitude must be non-negative"));
    }
    Ok(altitude_km + EARTH_RADIUS_KM)
}

/// Circular-orbit speed v = sqrt(M_E·G_E / R), in m/s.
pub fn orbital_velocity(radius_km: f64) -> Result<f64> {
    if radius_km <= 0.0 {
        return Err(Error::domain("orbital_velocity", "radius must be positive"));
    }
    let r_m = radius_km * 1e3;
    Ok((EARTH_MASS_KG * GRAVITATIONAL_CONSTANT / r_m).sqrt())
}

/// Orbital period T = 2π·sqrt(R³ / (M_E·G_E)), in seconds.
pub fn orbital_period(radius_km: f64) -> Result<f64> {
    if radius_km <= 0.0 {
        return Err(Error::domain("orbital_period", "radius must be positive"));
    }
    let r_m = radius_km * 1e3;
    Ok(2.0 * std::f64::consts::PI
        * (r_m.powi(3) / (EARTH_MASS_KG * GRAVITATIONAL_CONSTANT)).sqrt())
}

/// Sub-satellite point speed over the ground, km/s.
pub fn ground_speed_km_s(altitude_km: f64) -> Result<f64> {
    let r = orbital_radius(altitude_km)?;
    let v = orbital_velocity(r)?;
    Ok(v * (EARTH_RADIUS_KM / r) / 1e3)
}

/// Generate a scenario deterministically from `(config, seed)`.
///
/// CTE positions are a homogeneous Poisson point process realization over
/// the square region (count conditioned to the configured value unless
/// `poisson_cte_count` is set). Ground tracks for the moving layers are
/// redrawn until every CTE sees at least `min_cubesats_in_range` CubeSats
/// within the horizon, up to `max_generation_attempts`.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.check()?;
    let mut rng = rng::stream(seed, "scenario");
    let side = config.region_side_km();

    // CTEs first: positions are independent of the track retry loop.
    let cte_count = if config.poisson_cte_count {
        poisson_knuth(&mut rng, f64::from(config.cte_count))
    } else {
        config.cte_count as usize
    };
    let mut ctes = Vec::with_capacity(cte_count);
    for i in 0..cte_count {
        ctes.push(Cte {
            id: CteId(i as u32),
            position_km: [rng.gen_range(0.0..side), rng.gen_range(0.0..side)],
            cached_memory_mb: 0.0,
            transmit_power_mw: config.cte_power_mw,
            channel_gain_db: config.channel_gain_db,
        });
    }

    let mut satellites = Vec::new();
    let push_layer = |satellites: &mut Vec<Satellite>, layer, count: u32| {
        for _ in 0..count {
            let id = SatelliteId(satellites.len() as u32);
            let (alt, bw, cpp, procs, comm, comp, fp) = match layer {
                SatelliteLayer::Cns => (
                    config.cns_altitude_km,
                    config.cns_bandwidth_hz,
                    config.cns_compute_gcps,
                    config.cns_processors,
                    config.cns_comm_price,
                    config.cns_compute_price,
                    None,
                ),
                SatelliteLayer::Lms => (
                    config.lms_altitude_km,
                    config.lms_bandwidth_hz,
                    config.lms_compute_gcps,
                    config.lms_processors,
                    config.lms_comm_price,
                    config.lms_compute_price,
                    Some(config.lms_footprint_radius_km),
                ),
                SatelliteLayer::CubeSat => (
                    config.cubesat_altitude_km,
                    config.cubesat_bandwidth_hz,
                    config.cubesat_compute_gcps,
                    config.cubesat_processors,
                    config.cubesat_comm_price,
                    config.cubesat_compute_price,
                    Some(config.cubesat_footprint_radius_km),
                ),
            };
            satellites.push(Satellite {
                id,
                layer,
                altitude_km: alt,
                bandwidth_hz: bw,
                compute_per_processor_gcps: cpp,
                processor_count: procs,
                comm_unit_price: comm,
                compute_unit_price: comp,
                footprint_radius_km: fp,
            });
        }
    };
    push_layer(&mut satellites, SatelliteLayer::Cns, config.cns_count);
    push_layer(&mut satellites, SatelliteLayer::Lms, config.lms_count);
    push_layer(&mut satellites, SatelliteLayer::CubeSat, config.cubesat_count);

    // Moving-layer tracks: retry until the CubeSat visibility rule holds.
    let mut attempt = 0usize;
    let tracks = loop {
        attempt += 1;
        let mut tracks: Vec<Option<GroundTrack>> = Vec::with_capacity(satellites.len());
        for sat in &satellites {
            if sat.layer == SatelliteLayer::Cns {
                tracks.push(None);
                continue;
            }
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let refp = [rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
            let stagger = (config.pass_stagger_fraction * config.horizon_s()).max(0.0);
            let ref_time = if stagger > 0.0 { rng.gen_range(0.0..stagger) } else { 0.0 };
            let speed = ground_speed_km_s(sat.altitude_km)?;
            tracks.push(Some(GroundTrack {
                direction: [theta.cos(), theta.sin()],
                ref_point_km: refp,
                ground_speed_km_s: speed,
                ref_time_s: ref_time,
                wrap_km: 2.0 * std::f64::consts::PI * EARTH_RADIUS_KM,
            }));
        }

        if cubesat_rule_holds(config, &satellites, &tracks, &ctes) {
            break tracks;
        }
        if attempt >= config.max_generation_attempts as usize {
            return Err(Error::Generation {
                attempts: attempt,
                msg: format!(
                    "could not give every CTE {} CubeSats in range; \
                     footprint radius {} km may be too small for the region",
                    config.min_cubesats_in_range, config.cubesat_footprint_radius_km
                ),
            });
        }
    };

    // Tasks: per-sub-task memory uniform in the configured range; compute
    // demand follows memory through the monotone affine map between the two
    // ranges, so demand is uniform in its range and never decreases with size.
    let [m_lo, m_hi] = config.task_memory_range_mb;
    let [c_lo, c_hi] = config.task_compute_range_gigacycles;
    let compute_of = |m: f64| {
        if m_hi > m_lo {
            c_lo + (m - m_lo) / (m_hi - m_lo) * (c_hi - c_lo)
        } else {
            0.5 * (c_lo + c_hi)
        }
    };
    let mut tasks = Vec::new();
    let mut next_sub = 0u32;
    if !ctes.is_empty() {
        for t in 0..config.task_count {
            let mut subtasks = Vec::with_capacity(config.subtasks_per_task as usize);
            let owners = sample_owners(&mut rng, ctes.len(), config.subtasks_per_task as usize);
            for owner in owners {
                let m = rng.gen_range(m_lo..=m_hi);
                subtasks.push(SubTask {
                    parent_task: TaskId(t),
                    id: SubTaskId(next_sub),
                    owner: CteId(owner as u32),
                    memory_mb: m,
                    compute_gigacycles: compute_of(m),
                });
                next_sub += 1;
            }
            tasks.push(Task { id: TaskId(t), subtasks });
        }
    }
    for task in &tasks {
        for s in &task.subtasks {
            ctes[s.owner.0 as usize].cached_memory_mb += s.memory_mb;
        }
    }

    let menus = build_menus(config, &satellites, &tracks, &ctes)?;

    let scenario = Scenario {
        seed,
        config: config.clone(),
        satellites,
        ctes,
        tasks,
        tracks,
        menus,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Coverage windows for every (satellite, CTE) pair over the horizon.
///
/// Windows per pair are disjoint and sorted by start slot. The CNS yields a
/// single full-horizon window per CTE; moving satellites yield one window
/// per pass of their footprint over the CTE.
pub fn coverage_windows(scenario: &Scenario, horizon_slots: u32) -> Vec<CoverageWindow> {
    let mut out = Vec::new();
    for sat in &scenario.satellites {
        for cte in &scenario.ctes {
            match &scenario.tracks[sat.id.0 as usize] {
                None => out.push(CoverageWindow {
                    satellite: sat.id,
                    cte: cte.id,
                    start_slot: 0,
                    end_slot: horizon_slots - 1,
                    t_max_s: f64::from(horizon_slots) * scenario.config.slot_s,
                }),
                Some(track) => {
                    let radius = sat
                        .footprint_radius_km
                        .expect("moving satellites carry a footprint radius");
                    out.extend(pass_windows(
                        sat.id,
                        cte,
                        track,
                        radius,
                        horizon_slots,
                        scenario.config.slot_s,
                    ));
                }
            }
        }
    }
    out
}

/// Windows of one moving satellite over one CTE.
fn pass_windows(
    sat: SatelliteId,
    cte: &Cte,
    track: &GroundTrack,
    footprint_km: f64,
    horizon_slots: u32,
    slot_s: f64,
) -> Vec<CoverageWindow> {
    let rel = [
        cte.position_km[0] - track.ref_point_km[0],
        cte.position_km[1] - track.ref_point_km[1],
    ];
    let along = rel[0] * track.direction[0] + rel[1] * track.direction[1];
    let cross = rel[0] * track.direction[1] - rel[1] * track.direction[0];
    if cross.abs() >= footprint_km {
        return Vec::new();
    }
    let half_chord = (footprint_km * footprint_km - cross * cross).sqrt();
    let horizon_s = f64::from(horizon_slots) * slot_s;
    let v = track.ground_speed_km_s;

    // Covered while v·(t - ref_time) ∈ [along - w + k·wrap, along + w + k·wrap].
    let mut windows = Vec::new();
    let k_min = ((-track.ref_time_s * v - along - half_chord) / track.wrap_km).floor() as i64;
    let k_max = (((horizon_s - track.ref_time_s) * v - along + half_chord) / track.wrap_km).ceil()
        as i64;
    for k in k_min..=k_max {
        let shift = k as f64 * track.wrap_km;
        let t_enter = track.ref_time_s + (along - half_chord + shift) / v;
        let t_exit = track.ref_time_s + (along + half_chord + shift) / v;
        let t_enter = t_enter.max(0.0);
        let t_exit = t_exit.min(horizon_s);
        if t_exit <= t_enter {
            continue;
        }
        // A slot is covered when its start instant lies inside the pass.
        let start_slot = (t_enter / slot_s).ceil() as i64;
        let mut end_slot = (t_exit / slot_s).floor() as i64;
        if end_slot as f64 * slot_s >= t_exit {
            end_slot -= 1; // half-open pass end
        }
        let end_slot = end_slot.min(i64::from(horizon_slots) - 1);
        if start_slot > end_slot || start_slot < 0 {
            continue;
        }
        windows.push(CoverageWindow {
            satellite: sat,
            cte: cte.id,
            start_slot: start_slot as u32,
            end_slot: end_slot as u32,
            t_max_s: (end_slot - start_slot + 1) as f64 * slot_s,
        });
    }
    windows.sort_by_key(|w| w.start_slot);
    windows
}

fn cubesat_rule_holds(
    config: &ScenarioConfig,
    satellites: &[Satellite],
    tracks: &[Option<GroundTrack>],
    ctes: &[Cte],
) -> bool {
    let need = config.min_cubesats_in_range.min(config.cubesat_count) as usize;
    ctes.iter().all(|cte| {
        let mut seen = 0usize;
        for sat in satellites {
            if sat.layer != SatelliteLayer::CubeSat {
                continue;
            }
            let track = tracks[sat.id.0 as usize].as_ref().expect("cubesat track");
            let radius = sat.footprint_radius_km.expect("cubesat footprint");
            if !pass_windows(sat.id, cte, track, radius, config.horizon_slots, config.slot_s)
                .is_empty()
            {
                seen += 1;
                if seen >= need {
                    return true;
                }
            }
        }
        seen >= need
    })
}

/// Fixed candidate menus: the nearest covering CubeSats and LMS per CTE
/// (by track reference point), plus the CNS.
fn build_menus(
    config: &ScenarioConfig,
    satellites: &[Satellite],
    tracks: &[Option<GroundTrack>],
    ctes: &[Cte],
) -> Result<Vec<CandidateMenu>> {
    let cns = satellites
        .iter()
        .find(|s| s.layer == SatelliteLayer::Cns)
        .ok_or_else(|| Error::Config("no CNS in scenario".into()))?
        .id;
    let mut menus = Vec::with_capacity(ctes.len());
    for cte in ctes {
        let covering = |layer: SatelliteLayer| -> Vec<(f64, SatelliteId)> {
            let mut v: Vec<(f64, SatelliteId)> = satellites
                .iter()
                .filter(|s| s.layer == layer)
                .filter_map(|s| {
                    let track = tracks[s.id.0 as usize].as_ref()?;
                    let radius = s.footprint_radius_km?;
                    let has_window = !pass_windows(
                        s.id,
                        cte,
                        track,
                        radius,
                        config.horizon_slots,
                        config.slot_s,
                    )
                    .is_empty();
                    has_window.then(|| {
                        let dx = track.ref_point_km[0] - cte.position_km[0];
                        let dy = track.ref_point_km[1] - cte.position_km[1];
                        (dx * dx + dy * dy, s.id)
                    })
                })
                .collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            v
        };
        let cubes = covering(SatelliteLayer::CubeSat);
        let lmses = covering(SatelliteLayer::Lms);
        let lms = lmses
            .first()
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::Generation {
                attempts: 0,
                msg: format!("cte{} has no covering LMS", cte.id.0),
            })?;
        let take = config.menu_cubesats as usize;
        if cubes.len() < take {
            return Err(Error::Generation {
                attempts: 0,
                msg: format!("cte{} has only {} covering CubeSats", cte.id.0, cubes.len()),
            });
        }
        menus.push(CandidateMenu {
            cubesats: cubes.into_iter().take(take).map(|(_, id)| id).collect(),
            lms,
            cns,
        });
    }
    Ok(menus)
}

fn sample_owners(rng: &mut impl Rng, n_ctes: usize, k: usize) -> Vec<usize> {
    if n_ctes >= k {
        // Without replacement: partial Fisher-Yates over indices.
        let mut idx: Vec<usize> = (0..n_ctes).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n_ctes);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    } else {
        (0..k).map(|_| rng.gen_range(0..n_ctes)).collect()
    }
}

fn poisson_knuth(rng: &mut impl Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    // Inversion by sequential search is fine for the counts used here.
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0f64;
    loop {
        p *= rng.gen_range(0.0..1.0);
        if p <= l {
            return k;
        }
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            cte_count: 12,
            task_count: 4,
            lms_count: 2,
            cubesat_count: 6,
            horizon_slots: 120,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn orbital_radius_cases() {
        assert_eq!(orbital_radius(0.0).unwrap(), 6371.0);
        assert_eq!(orbital_radius(1000.0).unwrap(), 7371.0);
        assert_eq!(orbital_radius(35786.0).unwrap(), 42157.0);
        assert!(orbital_radius(-1.0).is_err());
    }

    #[test]
    fn orbital_velocity_matches_independent_evaluation() {
        // sqrt(5.9722e24 * 6.67e-11 / 7.371e6) evaluated independently.
        let v = orbital_velocity(7371.0).unwrap();
        assert!((v - 7351.0).abs() / 7351.0 < 0.01, "v = {v}");
        let v200 = orbital_velocity(6571.0).unwrap();
        assert!((v200 - 7786.0).abs() / 7786.0 < 0.01, "v = {v200}");
        assert!(orbital_velocity(0.0).is_err());
    }

    #[test]
    fn orbital_velocity_scaling_law() {
        let v1 = orbital_velocity(8000.0).unwrap();
        let v2 = orbital_velocity(16000.0).unwrap();
        assert!((v1 / v2 - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn orbital_period_matches_independent_evaluation() {
        let t = orbital_period(7371.0).unwrap();
        assert!((t - 6300.0).abs() / 6300.0 < 0.01, "T = {t}");
        let geo = orbital_period(42157.0).unwrap();
        assert!((geo - 86160.0).abs() / 86160.0 < 0.01, "T = {geo}");
        assert!(orbital_period(-5.0).is_err());
    }

    #[test]
    fn period_velocity_radius_identities() {
        for r in [6571.0, 7371.0, 42157.0] {
            let v = orbital_velocity(r).unwrap();
            let t = orbital_period(r).unwrap();
            let mu = EARTH_MASS_KG * GRAVITATIONAL_CONSTANT;
            assert!((v * v * (r * 1e3) / mu - 1.0).abs() < 1e-12);
            assert!((t * v / (2.0 * std::f64::consts::PI * r * 1e3) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_counts_match_config() {
        let cfg = small_config();
        let s = generate_scenario(&cfg, 7).unwrap();
        assert_eq!(s.ctes.len(), 12);
        assert_eq!(s.tasks.len(), 4);
        assert_eq!(s.satellites.len(), (1 + 2 + 6) as usize);
        assert_eq!(s.subtask_count(), 20);
        for task in &s.tasks {
            let sum: f64 = task.subtasks.iter().map(|x| x.memory_mb).sum();
            assert!((task.memory_mb() - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config();
        let a = generate_scenario(&cfg, 99).unwrap();
        let b = generate_scenario(&cfg, 99).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_scenario(&cfg, 100).unwrap();
        assert_ne!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn zero_ctes_is_valid_and_empty() {
        let cfg = ScenarioConfig { cte_count: 0, ..small_config() };
        let s = generate_scenario(&cfg, 3).unwrap();
        assert!(s.tasks.is_empty());
        assert!(s.ctes.is_empty());
        s.validate().unwrap();
    }

    #[test]
    fn sampled_values_inside_ranges_and_monotone() {
        let cfg = small_config();
        let s = generate_scenario(&cfg, 11).unwrap();
        let mut pairs: Vec<(f64, f64)> = s
            .subtasks()
            .map(|st| (st.memory_mb, st.compute_gigacycles))
            .collect();
        for &(m, c) in &pairs {
            assert!((10.0..=90.0).contains(&m));
            assert!((15.0..=70.0).contains(&c));
        }
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1, "compute demand must be non-decreasing in memory");
        }
    }

    #[test]
    fn cns_windows_span_horizon() {
        let cfg = small_config();
        let s = generate_scenario(&cfg, 5).unwrap();
        let windows = coverage_windows(&s, cfg.horizon_slots);
        for w in windows.iter().filter(|w| s.satellite(w.satellite).layer == SatelliteLayer::Cns) {
            assert_eq!(w.start_slot, 0);
            assert_eq!(w.end_slot, cfg.horizon_slots - 1);
        }
    }

    #[test]
    fn windows_disjoint_and_sorted_per_pair() {
        let cfg = ScenarioConfig { horizon_slots: 20_000, ..small_config() };
        let s = generate_scenario(&cfg, 5).unwrap();
        let windows = coverage_windows(&s, cfg.horizon_slots);
        use std::collections::BTreeMap;
        let mut by_pair: BTreeMap<(SatelliteId, CteId), Vec<&CoverageWindow>> = BTreeMap::new();
        for w in &windows {
            assert!(w.start_slot <= w.end_slot);
            assert!(w.t_max_s > 0.0);
            by_pair.entry((w.satellite, w.cte)).or_default().push(w);
        }
        for ws in by_pair.values() {
            for pair in ws.windows(2) {
                assert!(pair[0].end_slot < pair[1].start_slot);
            }
        }
    }

    #[test]
    fn stationary_full_footprint_satellite_covers_full_horizon() {
        // Degenerate geometry: zero-speed track handled by the CNS path in
        // practice; here a footprint larger than the wrap distance cannot
        // occur, so emulate with a footprint covering the whole region and
        // a pass long enough to span the short horizon.
        let cfg = ScenarioConfig {
            horizon_slots: 10,
            cubesat_footprint_radius_km: 4000.0,
            ..small_config()
        };
        let s = generate_scenario(&cfg, 2).unwrap();
        let windows = coverage_windows(&s, cfg.horizon_slots);
        let any_full = windows
            .iter()
            .filter(|w| s.satellite(w.satellite).layer == SatelliteLayer::CubeSat)
            .any(|w| w.start_slot == 0 && w.end_slot == cfg.horizon_slots - 1);
        assert!(any_full, "a 4000 km footprint pass should span a 10 s horizon");
    }

    #[test]
    fn cubesat_windows_shorter_than_lms() {
        // Independent oracle: max pass duration = 2·footprint / ground speed.
        let cfg = small_config();
        let cube_max = 2.0 * cfg.cubesat_footprint_radius_km
            / ground_speed_km_s(cfg.cubesat_altitude_km).unwrap();
        let lms_min_chord = {
            // Worst-case cross-track offset is the region diagonal.
            let b = 2f64.sqrt() * cfg.region_side_km();
            2.0 * (cfg.lms_footprint_radius_km.powi(2) - b * b).sqrt()
        };
        let lms_min = lms_min_chord / ground_speed_km_s(cfg.lms_altitude_km).unwrap();
        assert!(cube_max < lms_min, "cube {cube_max:.1}s vs lms {lms_min:.1}s");

        // And on a generated scenario with the horizon long enough for full passes.
        let cfg = ScenarioConfig { horizon_slots: 20_000, pass_stagger_fraction: 0.2, ..cfg };
        let s = generate_scenario(&cfg, 17).unwrap();
        let windows = coverage_windows(&s, cfg.horizon_slots);
        let full = |layer: SatelliteLayer| -> Vec<f64> {
            windows
                .iter()
                .filter(|w| s.satellite(w.satellite).layer == layer)
                .filter(|w| w.start_slot > 0 && w.end_slot < cfg.horizon_slots - 1)
                .map(|w| w.t_max_s)
                .collect()
        };
        let cubes = full(SatelliteLayer::CubeSat);
        let lms = full(SatelliteLayer::Lms);
        assert!(!cubes.is_empty() && !lms.is_empty());
        let cube_longest = cubes.iter().cloned().fold(0.0, f64::max);
        let lms_shortest = lms.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            cube_longest < lms_shortest,
            "cube {cube_longest}s vs lms {lms_shortest}s"
        );
    }

    #[test]
    fn infeasible_footprint_errors_out() {
        let cfg = ScenarioConfig {
            cubesat_footprint_radius_km: 0.001,
            max_generation_attempts: 3,
            ..small_config()
        };
        match generate_scenario(&cfg, 1) {
            Err(Error::Generation { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn price_ordering_enforced() {
        let cfg = ScenarioConfig { cns_compute_price: 0.01, ..small_config() };
        assert!(generate_scenario(&cfg, 1).is_err());
    }

    #[test]
    fn menus_have_fixed_shape() {
        let cfg = small_config();
        let s = generate_scenario(&cfg, 8).unwrap();
        for menu in &s.menus {
            assert_eq!(menu.cubesats.len(), 3);
            assert_eq!(menu.len(), 5);
            assert_eq!(s.satellite(menu.cns).layer, SatelliteLayer::Cns);
            assert_eq!(s.satellite(menu.lms).layer, SatelliteLayer::Lms);
        }
    }
}
