//! Environments: two toy tasks with known Pareto fronts and a client/server
//! pair for the line-delimited JSON environment protocol.

mod protocol;
mod toy;

pub use protocol::{bridge_check, serve, BridgeReport, ProtocolClient, StubEnv};
pub use toy::{analytic_front, PointMass, TwoObjectiveBandit};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pref::RewardVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub m: usize,
    pub horizon: usize,
    /// Hypervolume reference point shared by every method and seed.
    pub hv_reference: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: RewardVector,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts an episode; the initial observation is a function of `seed`.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;

    /// Advances one step. Actions outside `[−1, 1]` are clipped.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        (**self).step(action)
    }
}

pub const BANDIT_ID: &str = "bandit";
pub const POINT_MASS_ID: &str = "point-mass";

/// Builds a toy environment by id.
pub fn make_env(id: &str) -> Result<Box<dyn Environment + Send>> {
    match id {
        BANDIT_ID | "two-objective-bandit" => Ok(Box::new(TwoObjectiveBandit::new())),
        POINT_MASS_ID | "pointmass" => Ok(Box::new(PointMass::new())),
        "stub" => Ok(Box::new(StubEnv::new())),
        other => Err(Error::Env(format!("unknown environment `{other}`"))),
    }
}

pub(crate) fn clip_action(action: &[f64], act_dim: usize) -> Result<Vec<f64>> {
    crate::error::check_dim(act_dim, action.len())?;
    if action.iter().any(|a| a.is_nan()) {
        return Err(Error::NonFinite("action"));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}
