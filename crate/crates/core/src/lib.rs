//! Hindsight preference replay (HPR) for preference-conditioned
//! multi-objective actor-critic learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`pref`]: preference, reward and return vectors; scalarization.
//! - [`relabel`]: Dirichlet neighborhood and return-aligned relabeling,
//!   acceptance filters.
//! - [`replay`]: two-pool replay buffer with `ρ`-mixed minibatches.
//! - [`nn`]: dense networks, reverse-mode gradients, Adam.
//! - [`agent`]: preference-conditioned soft actor-critic.
//! - [`envs`]: toy two-objective environments and the line-delimited JSON
//!   environment protocol.
//! - [`metrics`]: Pareto filtering, 2-D hypervolume, sparsity, expected
//!   utility.
//! - [`stats`]: Welch's t-test.
//! - [`harness`]: configs, seeded training runs, evaluation, reports.

pub mod agent;
pub mod envs;
pub mod harness;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pref;
pub mod relabel;
pub mod replay;
pub mod stats;

pub use error::{Error, Result};
pub use pref::{PreferenceVector, ReturnVector, RewardVector};
