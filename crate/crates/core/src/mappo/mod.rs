//! Cooperative multi-agent PPO with an attention-based centralized critic
//! and a counterfactual baseline.
//!
//! Each LMS and CubeSat is an agent; agents of one layer share one
//! parameter bundle by default (per-satellite bundles behind a flag). The
//! same machinery hosts the single-agent central-controller baseline by
//! giving every decision the full state as its observation and one shared
//! bundle, which factorizes a joint policy over the product action space.

mod advantage;
mod bundle;
mod policy;
mod trainer;

pub use advantage::{counterfactual_baseline, gae_advantage, k_step_q_hat};
pub use bundle::{AgentBundle, AgentClass, NetProfile};
pub use policy::{masked_log_softmax, masked_softmax, sample_masked};
pub use trainer::{
    cc_ppo_train, train, AgentGrouping, EpisodeStats, ExperiencePool, LearnedPolicy, PpoHyper,
    TrainConfig, TrainOutput, Trainer, TrainerCheckpoint, Transition, UpdateStats,
};
