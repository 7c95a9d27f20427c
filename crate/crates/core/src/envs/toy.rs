use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{clip_action, EnvSpec, Environment, StepResult, BANDIT_ID, POINT_MASS_ID};
use crate::error::{Error, Result};
use crate::pref::{ReturnVector, RewardVector};

fn bandit_reward(a: f64) -> [f64; 2] {
    [1.0 - (a - 0.5).powi(2), 1.0 - (a + 0.5).powi(2)]
}

/// One-step continuous bandit. Action `a ∈ [−1, 1]` pays
/// `(1 − (a − ½)², 1 − (a + ½)²)`; every `a ∈ [−½, ½]` is Pareto optimal.
#[derive(Debug, Clone)]
pub struct TwoObjectiveBandit {
    spec: EnvSpec,
    ready: bool,
}

impl TwoObjectiveBandit {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: BANDIT_ID.into(),
                obs_dim: 1,
                act_dim: 1,
                m: 2,
                horizon: 1,
                hv_reference: vec![-2.0, -2.0],
            },
            ready: false,
        }
    }
}

impl Default for TwoObjectiveBandit {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for TwoObjectiveBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>> {
        self.ready = true;
        Ok(vec![0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.ready {
            return Err(Error::Env("bandit stepped without an open episode".into()));
        }
        let a = clip_action(action, 1)?[0];
        self.ready = false;
        Ok(StepResult {
            observation: vec![0.0],
            reward: RewardVector::new(bandit_reward(a).to_vec())?,
            terminated: true,
            truncated: false,
        })
    }
}

const GOALS: [[f64; 2]; 2] = [[1.0, 0.0], [-1.0, 0.0]];
const SPEED: f64 = 0.1;

fn goal_rewards(pos: [f64; 2]) -> Vec<f64> {
    GOALS
        .iter()
        .map(|g| -((pos[0] - g[0]).powi(2) + (pos[1] - g[1]).powi(2)).sqrt())
        .collect()
}

/// Planar point mass pulled between two goals at `(±1, 0)`. Each objective
/// is the negative distance to its goal after the move; episodes truncate
/// after 32 steps.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    t: usize,
    ready: bool,
}

impl PointMass {
    pub const HORIZON: usize = 32;

    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                id: POINT_MASS_ID.into(),
                obs_dim: 2,
                act_dim: 2,
                m: 2,
                horizon: Self::HORIZON,
                hv_reference: vec![-64.0, -64.0],
            },
            pos: [0.0; 2],
            t: 0,
            ready: false,
        }
    }

    /// Places the mass at `pos` and opens an episode there.
    pub fn reset_to(&mut self, pos: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.t = 0;
        self.ready = true;
        pos.to_vec()
    }
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = [rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1)];
        Ok(self.reset_to(pos))
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.ready {
            return Err(Error::Env("point mass stepped without an open episode".into()));
        }
        let a = clip_action(action, 2)?;
        self.pos = [self.pos[0] + SPEED * a[0], self.pos[1] + SPEED * a[1]];
        self.t += 1;
        let truncated = self.t >= Self::HORIZON;
        if truncated {
            self.ready = false;
        }
        Ok(StepResult {
            observation: self.pos.to_vec(),
            reward: RewardVector::new(goal_rewards(self.pos))?,
            terminated: false,
            truncated,
        })
    }
}

/// Undiscounted return of driving from the origin straight to `(x, 0)` at
/// full speed and holding there for the rest of the horizon.
fn point_mass_line_return(x: f64) -> Vec<f64> {
    let mut env = PointMass::new();
    env.reset_to([0.0, 0.0]);
    let mut total = vec![0.0; 2];
    loop {
        let remaining = x - env.pos[0];
        let a = (remaining / SPEED).clamp(-1.0, 1.0);
        let step = env.step(&[a, 0.0]).expect("episode open");
        for (g, r) in total.iter_mut().zip(step.reward.values()) {
            *g += r;
        }
        if step.done() {
            return total;
        }
    }
}

/// `n` points on the true Pareto front of a toy environment.
pub fn analytic_front(env_id: &str, n: usize) -> Result<Vec<ReturnVector>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        if n == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        }
    };
    match env_id {
        BANDIT_ID | "two-objective-bandit" => grid(-0.5, 0.5)
            .into_iter()
            .map(|a| ReturnVector::new(bandit_reward(a).to_vec()))
            .collect(),
        POINT_MASS_ID | "pointmass" => grid(-1.0, 1.0)
            .into_iter()
            .map(|x| ReturnVector::new(point_mass_line_return(x)))
            .collect(),
        other => Err(Error::Env(format!("no analytic front for `{other}`"))),
    }
}
