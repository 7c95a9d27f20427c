//! Experiment orchestration: run configs, seeded training runs with periodic
//! evaluation on a fixed preference grid, run logs, Table-1 style comparisons
//! and Pareto-front export.

mod report;
mod train;

pub use report::{
    compare_runs, export_front, load_run_logs, read_front, write_run_log, Comparison, MeanStd, SideSummary,
};
pub use train::{evaluate_policy, preference_grid, run_training, train_seed, Evaluation, TrainOutcome};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::envs::{make_env, EnvSpec, Environment, ProtocolClient};
use crate::error::{Error, Result};
use crate::metrics::{EvalRecord, ParetoArchive};
use crate::relabel::RelabelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Preference-conditioned actor-critic with a plain replay buffer.
    Baseline,
    /// The same learner with hindsight preference replay.
    Hpr,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Hpr => "hpr",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" | "capql" => Ok(Algorithm::Baseline),
            "hpr" | "hpr-capql" => Ok(Algorithm::Hpr),
            other => Err(Error::Config(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub total_steps: u64,
    pub eval_every: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Overrides the environment's hypervolume reference point.
    #[serde(default)]
    pub hv_reference: Option<Vec<f64>>,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Program and arguments of an environment server speaking the
    /// line-delimited JSON protocol on stdio.
    #[serde(default)]
    pub bridge_command: Option<Vec<String>>,
    /// `host:port` of an environment server speaking the protocol over TCP.
    #[serde(default)]
    pub bridge_tcp: Option<String>,
    #[serde(default)]
    pub relabel: RelabelConfig,
    #[serde(default)]
    pub agent: AgentConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Hpr
}

fn default_grid_size() -> usize {
    101
}

fn default_capacity() -> usize {
    1_000_000
}

fn default_rho() -> f64 {
    0.5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Toy-bandit config with default hyperparameters.
    pub fn bandit(total_steps: u64, eval_every: u64, seeds: Vec<u64>) -> Self {
        Self {
            env: crate::envs::BANDIT_ID.into(),
            algorithm: Algorithm::Hpr,
            total_steps,
            eval_every,
            seeds,
            grid_size: default_grid_size(),
            hv_reference: None,
            buffer_capacity: default_capacity(),
            rho: default_rho(),
            output_dir: default_output_dir(),
            bridge_command: None,
            bridge_tcp: None,
            relabel: RelabelConfig::default(),
            agent: AgentConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.eval_every == 0 || self.total_steps < self.eval_every {
            return fail(format!(
                "need total_steps >= eval_every >= 1, got {} and {}",
                self.total_steps, self.eval_every
            ));
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return fail(format!("seeds must be distinct, got {:?}", self.seeds));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return fail(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if self.grid_size < 2 {
            return fail(format!("grid_size must be >= 2, got {}", self.grid_size));
        }
        if self.buffer_capacity == 0 {
            return fail("buffer_capacity must be >= 1".into());
        }
        if let Some(r) = &self.hv_reference {
            if r.iter().any(|v| !v.is_finite()) {
                return fail(format!("hv_reference must be finite, got {r:?}"));
            }
        }
        if self.bridge_command.is_some() && self.bridge_tcp.is_some() {
            return fail("set at most one of bridge_command and bridge_tcp".into());
        }
        if self.bridge_command.as_ref().is_some_and(|c| c.is_empty()) {
            return fail("bridge_command is empty".into());
        }
        self.relabel.validate()?;
        self.agent.validate()
    }

    /// Relabeling as actually applied: the baseline never relabels.
    pub fn effective_relabel(&self) -> RelabelConfig {
        match self.algorithm {
            Algorithm::Baseline => RelabelConfig::disabled(),
            Algorithm::Hpr => self.relabel.clone(),
        }
    }

    /// Opens a fresh environment instance: a toy environment by id, or a
    /// bridged one when a command or address is configured.
    pub fn open_env(&self) -> Result<Box<dyn Environment + Send>> {
        if let Some(cmd) = &self.bridge_command {
            return Ok(Box::new(ProtocolClient::spawn(&self.env, cmd)?));
        }
        if let Some(addr) = &self.bridge_tcp {
            return Ok(Box::new(ProtocolClient::connect_tcp(&self.env, addr)?));
        }
        make_env(&self.env)
    }

    /// The hypervolume reference point used for every evaluation.
    pub fn reference_for(&self, spec: &EnvSpec) -> Result<Vec<f64>> {
        let reference = self.hv_reference.clone().unwrap_or_else(|| spec.hv_reference.clone());
        crate::error::check_dim(spec.m, reference.len())?;
        Ok(reference)
    }

    /// Copy of this config at one sweep point, writing below `output_dir`.
    pub fn at_sweep_point(&self, k: usize, kappa: f64, rho: f64) -> Self {
        let mut cfg = self.clone();
        cfg.algorithm = Algorithm::Hpr;
        cfg.relabel.k = k;
        cfg.relabel.kappa = kappa;
        cfg.rho = rho;
        cfg.output_dir = self.output_dir.join(format!("k{k}_kappa{kappa}_rho{rho}"));
        cfg
    }
}

/// Relabel counts, Dirichlet concentrations and relabeled fractions swept by
/// default.
pub const SWEEP_K: [usize; 4] = [0, 1, 2, 4];
pub const SWEEP_KAPPA: [f64; 3] = [10.0, 20.0, 50.0];
pub const SWEEP_RHO: [f64; 3] = [0.3, 0.5, 0.7];

/// Every `(K, κ, ρ)` combination of the default sweep.
pub fn sweep_grid() -> Vec<(usize, f64, f64)> {
    let mut out = Vec::new();
    for k in SWEEP_K {
        for kappa in SWEEP_KAPPA {
            for rho in SWEEP_RHO {
                out.push((k, kappa, rho));
            }
        }
    }
    out
}

/// Metrics of one periodic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub seed: u64,
    pub eum: f64,
    pub hv: f64,
    pub sparsity: f64,
    /// Mean undiscounted return per objective over the grid.
    pub mean_return: Vec<f64>,
    pub front_size: usize,
}

/// Everything one seed's run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub hv_reference: Vec<f64>,
    /// Training interactions with the environment. Evaluation rollouts and
    /// relabeled insertions are not counted.
    pub env_steps: u64,
    pub eval_env_steps: u64,
    pub updates: u64,
    pub original_inserts: u64,
    pub relabeled_inserts: u64,
    pub rows: Vec<EvalRow>,
    pub final_records: Vec<EvalRecord>,
    pub final_archive: ParetoArchive,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

impl RunLog {
    pub fn final_row(&self) -> Option<&EvalRow> {
        self.rows.last()
    }
}
