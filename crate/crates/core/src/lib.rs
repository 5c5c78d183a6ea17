//! Seeded simulator and optimizer for data-driven task offloading onto a
//! three-layer satellite edge-computing network.
//!
//! The crate is organized around a two-stage scheduler:
//!
//! 1. **Offloading decisions** (which satellite serves which sub-task) are
//!    made slot-by-slot by a policy — a cooperative multi-agent PPO with an
//!    attention-based centralized critic ([`mappo`]), a single-agent PPO
//!    variant, a whale-optimization metaheuristic, or a random baseline
//!    ([`baselines`]).
//! 2. **Resource allocation** (bandwidth shares, compute shares, dedicated
//!    core-server power) is solved exactly per server with closed forms
//!    derived from KKT conditions ([`allocator`]).
//!
//! The [`model`] module holds the network domain (satellites, ground
//! entities, tasks, orbital motion and coverage windows), [`channel`] holds
//! the pure time/price formulas, [`env`] the episodic decision environment,
//! [`neural`] a minimal reverse-mode autodiff with MLPs, attention and Adam,
//! and [`harness`] the experiment configuration, metrics and sweep runners.

pub mod allocator;
pub mod baselines;
pub mod channel;
pub mod env;
pub mod error;
pub mod harness;
pub mod mappo;
pub mod model;
pub mod neural;
pub mod rng;

pub use error::{Error, Result};
