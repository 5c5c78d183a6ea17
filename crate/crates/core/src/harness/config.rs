//! Experiment configuration: TOML-round-trippable, with every scenario
//! parameter defaulted to its table value when unspecified.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::{Thresholds, Weights};
use crate::baselines::WoaParams;
use crate::env::{CapacityFeature, EnvConfig};
use crate::error::{Error, Result};
use crate::mappo::{AgentGrouping, NetProfile, PpoHyper, TrainConfig};
use crate::model::ScenarioConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small networks and a desk-scale episode budget.
    Test,
    /// The reported setup: 3×512 hidden layers, 1.5e5 episodes.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    CoMappo,
    CcPpo,
    Woa,
    Random,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::CoMappo => "comappo",
            SchedulerKind::CcPpo => "ccppo",
            SchedulerKind::Woa => "woa",
            SchedulerKind::Random => "random",
        }
    }

    pub const ALL: [SchedulerKind; 4] =
        [SchedulerKind::CoMappo, SchedulerKind::CcPpo, SchedulerKind::Woa, SchedulerKind::Random];
}

/// One experiment axis for `run_sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Total sub-task counts before desk scaling.
    SubtaskCount { values: Vec<u32> },
    /// Per-sub-task memory ranges (MB); compute demand follows the default
    /// coupling.
    TaskMemory { ranges: Vec<[f64; 2]> },
    /// Per-sub-task compute-demand ranges (Gigacycles).
    ComputeDemand { ranges: Vec<[f64; 2]> },
    /// α₁ grid; α₂ = 1 − α₁ pairs each point.
    Alpha { alpha1_values: Vec<f64> },
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SubtaskCount { .. } => "subtask_count",
            SweepAxis::TaskMemory { .. } => "task_memory",
            SweepAxis::ComputeDemand { .. } => "compute_demand",
            SweepAxis::Alpha { .. } => "alpha1",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::SubtaskCount { values } => values.len(),
            SweepAxis::TaskMemory { ranges } => ranges.len(),
            SweepAxis::ComputeDemand { ranges } => ranges.len(),
            SweepAxis::Alpha { alpha1_values } => alpha1_values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value_label(&self, i: usize) -> String {
        match self {
            SweepAxis::SubtaskCount { values } => values[i].to_string(),
            SweepAxis::TaskMemory { ranges } => format!("{}-{}", ranges[i][0], ranges[i][1]),
            SweepAxis::ComputeDemand { ranges } => format!("{}-{}", ranges[i][0], ranges[i][1]),
            SweepAxis::Alpha { alpha1_values } => alpha1_values[i].to_string(),
        }
    }
}

/// Everything one experiment run needs; round-trippable through TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Config schema version.
    pub version: u32,
    pub scenario: ScenarioConfig,
    /// Weight of mean service time in the objective.
    pub alpha1: f64,
    /// Weight of mean service price; α₁ + α₂ must equal 1.
    pub alpha2: f64,
    /// Success reward scale Γ₁ and failure penalty Γ₂.
    pub gamma1: f64,
    pub gamma2: f64,
    pub scheduler: SchedulerKind,
    pub schedulers: Option<Vec<SchedulerKind>>,
    pub profile: Profile,
    /// Training episodes; profile default when unset.
    pub episodes: Option<usize>,
    /// Episodes evaluated greedily after training.
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepAxis>,
    /// Desk-scale divisor applied to sub-task sweep values.
    pub subtask_scale_divisor: u32,
    pub clip_epsilon: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub ppo_epochs: usize,
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub experience_capacity: usize,
    pub entropy_coef: f64,
    pub exploration_floor: f64,
    pub per_satellite_params: bool,
    pub ablation_no_convex: bool,
    /// Train on the slot's team reward sum rather than own-decision rewards.
    pub team_reward: bool,
    pub woa_population: usize,
    pub woa_budget: usize,
    pub bandwidth_share_cap: f64,
    pub compute_share_cap: Option<f64>,
    pub capacity_feature: CapacityFeature,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: 1,
            scenario: ScenarioConfig::default(),
            alpha1: 0.5,
            alpha2: 0.5,
            gamma1: 1.0,
            gamma2: 1.0,
            scheduler: SchedulerKind::CoMappo,
            schedulers: None,
            profile: Profile::Test,
            episodes: None,
            eval_episodes: 10,
            seeds: vec![1, 2, 3, 4, 5],
            sweep: None,
            subtask_scale_divisor: 10,
            clip_epsilon: 0.2,
            discount: 0.995,
            gae_lambda: 0.95,
            ppo_epochs: 4,
            learning_rate: 3e-4,
            minibatch_size: 1024,
            experience_capacity: 10240,
            entropy_coef: 0.0,
            exploration_floor: 0.0,
            per_satellite_params: false,
            ablation_no_convex: false,
            team_reward: false,
            woa_population: 30,
            woa_budget: 50,
            bandwidth_share_cap: 1.0,
            compute_share_cap: None,
            capacity_feature: CapacityFeature::RemainingCompute,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.alpha1 + self.alpha2 - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "alpha1 + alpha2 must equal 1, got {} + {}",
                self.alpha1, self.alpha2
            )));
        }
        if self.alpha1 <= 0.0 || self.alpha2 <= 0.0 {
            return Err(Error::Config("alphas must be positive".into()));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.ppo_hyper().validate()?;
        Ok(())
    }

    pub fn weights(&self) -> Weights {
        Weights { alpha1: self.alpha1, alpha2: self.alpha2 }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds { y_th: self.bandwidth_share_cap, beta_th: self.compute_share_cap }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            weights: self.weights(),
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            thresholds: self.thresholds(),
            capacity_feature: self.capacity_feature,
        }
    }

    pub fn net_profile(&self) -> NetProfile {
        match self.profile {
            Profile::Test => NetProfile::test(),
            Profile::Paper => NetProfile::paper(),
        }
    }

    pub fn episode_budget(&self) -> usize {
        self.episodes.unwrap_or(match self.profile {
            Profile::Test => 2_000,
            Profile::Paper => 150_000,
        })
    }

    pub fn ppo_hyper(&self) -> PpoHyper {
        PpoHyper {
            clip_epsilon: self.clip_epsilon,
            discount: self.discount,
            gae_lambda: self.gae_lambda,
            epochs: self.ppo_epochs,
            learning_rate: self.learning_rate,
            minibatch_size: self.minibatch_size,
            pool_capacity: self.experience_capacity,
            entropy_coef: self.entropy_coef,
            exploration_floor: self.exploration_floor,
        }
    }

    pub fn woa_params(&self) -> WoaParams {
        WoaParams { population: self.woa_population, spiral_b: 1.0, budget: self.woa_budget }
    }

    pub fn train_config(&self, scheduler: SchedulerKind, seed: u64) -> TrainConfig {
        let grouping = match (scheduler, self.per_satellite_params) {
            (SchedulerKind::CcPpo, _) => AgentGrouping::Central,
            (_, true) => AgentGrouping::PerSatellite,
            (_, false) => AgentGrouping::PerClass,
        };
        TrainConfig {
            scenario: self.scenario.clone(),
            env: self.env_config(),
            hyper: self.ppo_hyper(),
            profile: self.net_profile(),
            episodes: self.episode_budget(),
            grouping,
            ablation_no_convex: self.ablation_no_convex,
            team_reward: self.team_reward,
            seed,
        }
    }

    /// The schedulers a sweep compares.
    pub fn sweep_schedulers(&self) -> Vec<SchedulerKind> {
        self.schedulers.clone().unwrap_or_else(|| SchedulerKind::ALL.to_vec())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_table_values() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.scenario.lms_bandwidth_hz, 200e6);
        assert_eq!(cfg.scenario.cns_compute_price, 10.0);
        assert_eq!(cfg.discount, 0.995);
        assert_eq!(cfg.learning_rate, 3e-4);
        assert_eq!(cfg.minibatch_size, 1024);
        assert_eq!(cfg.experience_capacity, 10240);
        assert_eq!(cfg.episode_budget(), 2_000);
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.alpha1 = 0.3;
        cfg.alpha2 = 0.7;
        cfg.sweep = Some(SweepAxis::SubtaskCount { values: vec![500, 1000] });
        cfg.scenario.cte_count = 33;
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(serde_json::to_string(&cfg).unwrap(), serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            alpha1 = 0.7
            alpha2 = 0.3
            [scenario]
            cte_count = 12
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.cte_count, 12);
        assert_eq!(cfg.scenario.lms_count, 5);
        assert_eq!(cfg.alpha1, 0.7);
    }

    #[test]
    fn alpha_sum_enforced() {
        let bad = ExperimentConfig { alpha1: 0.6, alpha2: 0.6, ..ExperimentConfig::default() };
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_toml("alpha1 = 0.9").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("definitely_not_a_key = 1").is_err());
    }
}
