//! Preference-conditioned soft actor-critic.
//!
//! The actor sees `state ⧺ w` and emits the mean and log standard deviation
//! of a tanh-squashed Gaussian. Two critics and their Polyak-averaged targets
//! see `state ⧺ action ⧺ w`. Critics regress onto the scalarized soft Bellman
//! target `wᵀr + γ(1−d)(min Q′ − α log π)`, where `w` is whatever preference
//! the transition carries, original or relabeled.

use std::f64::consts::{LN_2, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{finite_difference_check, Activation, Adam, AdamConfig, Mlp};
use crate::pref::{softplus, utility, PreferenceVector};
use crate::replay::Transition;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Entropy coefficient; the initial value when `auto_alpha` is set.
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Defaults to `−act_dim`.
    pub target_entropy: Option<f64>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    /// Polyak coefficient: `θ′ ← (1−η)θ′ + ηθ`.
    pub polyak: f64,
    pub batch_size: usize,
    /// Gradient updates per environment step once warmup is over.
    pub updates_per_step: usize,
    pub warmup_steps: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            auto_alpha: false,
            target_entropy: None,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            polyak: 0.005,
            batch_size: 64,
            updates_per_step: 1,
            warmup_steps: 1000,
            hidden: vec![64, 64],
            activation: Activation::Relu,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.auto_alpha && self.alpha <= 0.0 {
            return fail("auto_alpha needs a positive initial alpha".into());
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return fail(format!("polyak must be in (0, 1], got {}", self.polyak));
        }
        for (name, lr) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_alpha", self.lr_alpha),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be > 0, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return fail(format!("hidden sizes must be positive, got {:?}", self.hidden));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic_losses: [f64; 2],
    pub actor_loss: f64,
    /// Monte-Carlo entropy estimate `−mean log π`.
    pub entropy: f64,
    pub alpha: f64,
}

/// Network inputs gathered from a minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub len: usize,
    /// `state ⧺ w`, row-major.
    pub policy_inputs: Vec<f64>,
    /// `next_state ⧺ w`.
    pub next_policy_inputs: Vec<f64>,
    /// `state ⧺ action ⧺ w`.
    pub critic_inputs: Vec<f64>,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub preferences: Vec<f64>,
    /// `wᵀr` per transition.
    pub utilities: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions(batch: &[&Transition]) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Empty("minibatch"));
        }
        let mut b = Batch {
            len: batch.len(),
            policy_inputs: Vec::new(),
            next_policy_inputs: Vec::new(),
            critic_inputs: Vec::new(),
            states: Vec::new(),
            next_states: Vec::new(),
            preferences: Vec::new(),
            utilities: Vec::with_capacity(batch.len()),
            dones: Vec::with_capacity(batch.len()),
        };
        for t in batch {
            let w = t.preference.weights();
            b.policy_inputs.extend_from_slice(&t.state);
            b.policy_inputs.extend_from_slice(w);
            b.next_policy_inputs.extend_from_slice(&t.next_state);
            b.next_policy_inputs.extend_from_slice(w);
            b.critic_inputs.extend_from_slice(&t.state);
            b.critic_inputs.extend_from_slice(&t.action);
            b.critic_inputs.extend_from_slice(w);
            b.states.extend_from_slice(&t.state);
            b.next_states.extend_from_slice(&t.next_state);
            b.preferences.extend_from_slice(w);
            b.utilities.push(utility(&t.preference, t.reward.values())?);
            b.dones.push(t.done);
        }
        Ok(b)
    }
}

/// `state ⧺ action ⧺ w` rows from row-major blocks.
fn concat_rows(parts: &[(&[f64], usize)], rows: usize) -> Vec<f64> {
    let width: usize = parts.iter().map(|(_, w)| w).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for (data, w) in parts {
            out.extend_from_slice(&data[r * w..(r + 1) * w]);
        }
    }
    out
}

/// `ln(1 − tanh²u)` in a form that stays finite for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

/// Scalarized soft Bellman target for one transition.
pub fn soft_target(utility: f64, done: bool, gamma: f64, q1: f64, q2: f64, alpha: f64, log_prob: f64) -> f64 {
    if done {
        utility
    } else {
        utility + gamma * (q1.min(q2) - alpha * log_prob)
    }
}

/// `θ′ ← (1−η)θ′ + ηθ`.
pub fn polyak(target: &mut [f64], online: &[f64], eta: f64) {
    assert_eq!(target.len(), online.len(), "polyak: parameter shapes differ");
    for (t, o) in target.iter_mut().zip(online) {
        *t = (1.0 - eta) * *t + eta * o;
    }
}

/// Reparameterized squashed-Gaussian draws for a batch.
struct PolicySample {
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    /// Pre-squash values `u = μ + σε`.
    pre: Vec<f64>,
    /// `σ` and whether the raw log-std was inside the clamp range.
    stds: Vec<f64>,
    unclamped: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    obs_dim: usize,
    act_dim: usize,
    m: usize,
    actor: Mlp,
    critics: [Mlp; 2],
    targets: [Mlp; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    log_alpha: f64,
    alpha_opt: Adam,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        m: usize,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend(&config.hidden);
            s.push(output);
            s
        };
        let act = config.activation;
        let actor = Mlp::init(sizes(obs_dim + m, 2 * act_dim), act, Activation::Identity, rng)?;
        let critic_in = obs_dim + act_dim + m;
        let c1 = Mlp::init(sizes(critic_in, 1), act, Activation::Identity, rng)?;
        let c2 = Mlp::init(sizes(critic_in, 1), act, Activation::Identity, rng)?;
        let adam = |n: usize, lr: f64| Adam::new(n, AdamConfig { lr, ..Default::default() });
        Ok(Self {
            obs_dim,
            act_dim,
            m,
            actor_opt: adam(actor.params().len(), config.lr_actor),
            critic_opts: [
                adam(c1.params().len(), config.lr_critic),
                adam(c2.params().len(), config.lr_critic),
            ],
            alpha_opt: adam(1, config.lr_alpha),
            log_alpha: config.alpha.ln(),
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            config,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.obs_dim, self.act_dim, self.m)
    }

    pub fn alpha(&self) -> f64 {
        if self.config.auto_alpha {
            self.log_alpha.exp()
        } else {
            self.config.alpha
        }
    }

    fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.act_dim as f64))
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic(&self, i: usize) -> &Mlp {
        &self.critics[i]
    }

    pub fn critic_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.critics[i]
    }

    pub fn target_critic(&self, i: usize) -> &Mlp {
        &self.targets[i]
    }

    pub fn target_critic_mut(&mut self, i: usize) -> &mut Mlp {
        &mut self.targets[i]
    }

    /// Squashed Gaussian draws given the actor's raw output and the noise.
    fn squash(&self, raw: &[f64], noise: &[f64], rows: usize) -> PolicySample {
        let k = self.act_dim;
        let n = rows * k;
        let mut s = PolicySample {
            actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(rows),
            pre: Vec::with_capacity(n),
            stds: Vec::with_capacity(n),
            unclamped: Vec::with_capacity(n),
        };
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        for r in 0..rows {
            let out = &raw[r * 2 * k..(r + 1) * 2 * k];
            let mut lp = 0.0;
            for i in 0..k {
                let raw_ls = out[k + i];
                let ls = raw_ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let std = ls.exp();
                let eps = noise[r * k + i];
                let u = out[i] + std * eps;
                lp += -0.5 * eps * eps - ls - half_ln_2pi - log_one_minus_tanh_sq(u);
                s.actions.push(u.tanh());
                s.pre.push(u);
                s.stds.push(std);
                s.unclamped.push((LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls));
            }
            s.log_probs.push(lp);
        }
        s
    }

    fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Vec<f64> {
        (0..rows * self.act_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Action for `(state, w)`; every coordinate lies in `[−1, 1]`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        w: &PreferenceVector,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_dim(self.obs_dim, state.len())?;
        check_dim(self.m, w.dim())?;
        let mut input = state.to_vec();
        input.extend_from_slice(w.weights());
        let raw = self.actor.forward(&input)?;
        Ok(match mode {
            ActMode::Deterministic => raw[..self.act_dim].iter().map(|u| u.tanh()).collect(),
            ActMode::Stochastic => {
                let noise = self.noise(1, rng);
                self.squash(&raw, &noise, 1).actions
            }
        })
    }

    /// Soft Bellman targets with fresh next actions from the actor.
    pub fn critic_targets<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Vec<f64>> {
        let noise = self.noise(batch.len, rng);
        self.critic_targets_with_noise(batch, &noise)
    }

    pub fn critic_targets_with_noise(&self, batch: &Batch, noise: &[f64]) -> Result<Vec<f64>> {
        let rows = batch.len;
        let raw = self.actor.forward_batch(&batch.next_policy_inputs, rows)?;
        let next = self.squash(raw.output(), noise, rows);
        let inputs = concat_rows(
            &[
                (&batch.next_states, self.obs_dim),
                (&next.actions, self.act_dim),
                (&batch.preferences, self.m),
            ],
            rows,
        );
        let q1 = self.targets[0].forward_batch(&inputs, rows)?;
        let q2 = self.targets[1].forward_batch(&inputs, rows)?;
        let alpha = self.alpha();
        Ok((0..rows)
            .map(|i| {
                soft_target(
                    batch.utilities[i],
                    batch.dones[i],
                    self.config.gamma,
                    q1.output()[i],
                    q2.output()[i],
                    alpha,
                    next.log_probs[i],
                )
            })
            .collect())
    }

    /// Mean squared error of critic `i` against `targets`, and its parameter
    /// gradient.
    pub fn critic_loss_and_grad(&self, i: usize, batch: &Batch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(batch.len, targets.len())?;
        let critic = &self.critics[i];
        let tape = critic.forward_batch(&batch.critic_inputs, batch.len)?;
        let scale = 1.0 / batch.len as f64;
        let mut loss = 0.0;
        let grad_out: Vec<f64> = tape
            .output()
            .iter()
            .zip(targets)
            .map(|(q, y)| {
                let d = q - y;
                loss += d * d * scale;
                2.0 * d * scale
            })
            .collect();
        let mut grads = vec![0.0; critic.params().len()];
        critic.backward(&tape, &grad_out, Some(&mut grads))?;
        Ok((loss, grads))
    }

    /// Actor objective `mean(α log π(a|s,w) − min Q(s,a,w))` for fixed noise,
    /// with its gradient and the batch's mean log-probability.
    pub fn actor_loss_and_grad(&self, batch: &Batch, noise: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
        let rows = batch.len;
        let k = self.act_dim;
        check_dim(rows * k, noise.len())?;
        let tape = self.actor.forward_batch(&batch.policy_inputs, rows)?;
        let sample = self.squash(tape.output(), noise, rows);
        let inputs = concat_rows(
            &[
                (&batch.states, self.obs_dim),
                (&sample.actions, k),
                (&batch.preferences, self.m),
            ],
            rows,
        );
        let t1 = self.critics[0].forward_batch(&inputs, rows)?;
        let t2 = self.critics[1].forward_batch(&inputs, rows)?;
        let scale = 1.0 / rows as f64;
        let alpha = self.alpha();

        let mut loss = 0.0;
        let mut pick1 = vec![0.0; rows];
        let mut pick2 = vec![0.0; rows];
        for r in 0..rows {
            let (q1, q2) = (t1.output()[r], t2.output()[r]);
            let q = if q1 <= q2 {
                pick1[r] = scale;
                q1
            } else {
                pick2[r] = scale;
                q2
            };
            loss += scale * (alpha * sample.log_probs[r] - q);
        }
        // ∂(mean min Q)/∂action, read off the critic input gradients.
        let g1 = self.critics[0].backward(&t1, &pick1, None)?;
        let g2 = self.critics[1].backward(&t2, &pick2, None)?;
        let width = self.obs_dim + k + self.m;

        let mut grad_out = vec![0.0; rows * 2 * k];
        for r in 0..rows {
            for i in 0..k {
                let col = r * width + self.obs_dim + i;
                let dq_da = g1[col] + g2[col];
                let idx = r * k + i;
                let a = sample.actions[idx];
                let std = sample.stds[idx];
                let eps = noise[idx];
                let da_du = 1.0 - a * a;
                // Per-sample loss α·log π − q, scaled by 1/B for log π terms;
                // dq_da already carries the 1/B factor.
                let d_mean = scale * alpha * 2.0 * a - dq_da * da_du;
                let d_log_std = scale * alpha * (-1.0 + 2.0 * a * std * eps) - dq_da * da_du * std * eps;
                grad_out[r * 2 * k + i] = d_mean;
                grad_out[r * 2 * k + k + i] = if sample.unclamped[idx] { d_log_std } else { 0.0 };
            }
        }
        let mut grads = vec![0.0; self.actor.params().len()];
        self.actor.backward(&tape, &grad_out, Some(&mut grads))?;
        let mean_log_prob = sample.log_probs.iter().sum::<f64>() * scale;
        Ok((loss, grads, mean_log_prob))
    }

    /// One soft actor-critic step: both critics, then the actor, then the
    /// entropy coefficient (if tuned), then the target networks.
    pub fn update<R: Rng + ?Sized>(&mut self, transitions: &[&Transition], rng: &mut R) -> Result<LossReport> {
        let batch = Batch::from_transitions(transitions)?;
        let targets = self.critic_targets(&batch, rng)?;
        let mut critic_losses = [0.0; 2];
        for i in 0..2 {
            let (loss, grads) = self.critic_loss_and_grad(i, &batch, &targets)?;
            critic_losses[i] = loss;
            self.critic_opts[i].step(self.critics[i].params_mut(), &grads)?;
        }
        let noise = self.noise(batch.len, rng);
        let (actor_loss, grads, mean_log_prob) = self.actor_loss_and_grad(&batch, &noise)?;
        self.actor_opt.step(self.actor.params_mut(), &grads)?;

        if self.config.auto_alpha {
            // ∂/∂log α of −log α·(log π + H̄)
            let g = -(mean_log_prob + self.target_entropy());
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[g])?;
            self.log_alpha = la[0];
        }
        for i in 0..2 {
            polyak(self.targets[i].params_mut(), self.critics[i].params(), self.config.polyak);
        }

        let report = LossReport {
            critic_losses,
            actor_loss,
            entropy: -mean_log_prob,
            alpha: self.alpha(),
        };
        let finite = critic_losses.iter().all(|l| l.is_finite())
            && actor_loss.is_finite()
            && report.entropy.is_finite()
            && report.alpha.is_finite();
        if !finite {
            return Err(Error::Divergence(format!("non-finite loss: {report:?}")));
        }
        Ok(report)
    }

    /// Worst relative error of the critic-loss gradient against central
    /// differences.
    pub fn grad_check_critic(&self, i: usize, batch: &Batch, targets: &[f64]) -> Result<f64> {
        let (_, analytic) = self.critic_loss_and_grad(i, batch, targets)?;
        let mut probe = self.clone();
        let params = self.critics[i].params().to_vec();
        Ok(finite_difference_check(&params, &analytic, 1e-5, |p| {
            probe.critics[i].set_params(p).expect("same shape");
            probe.critic_loss_and_grad(i, batch, targets).expect("checked").0
        }))
    }

    /// Worst relative error of the actor-loss gradient against central
    /// differences, holding the policy noise fixed.
    pub fn grad_check_actor(&self, batch: &Batch, noise: &[f64]) -> Result<f64> {
        let (_, analytic, _) = self.actor_loss_and_grad(batch, noise)?;
        let mut probe = self.clone();
        let params = self.actor.params().to_vec();
        Ok(finite_difference_check(&params, &analytic, 1e-5, |p| {
            probe.actor.set_params(p).expect("same shape");
            probe.actor_loss_and_grad(batch, noise).expect("checked").0
        }))
    }

    /// Writes networks, optimizer moments and a JSON manifest into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let nets = self.named_networks();
        for (name, net) in &nets {
            net.save(BufWriter::new(File::create(dir.join(format!("{name}.txt")))?))?;
        }
        let opt = |a: &Adam| OptimizerSnapshot {
            m: a.moments().0.to_vec(),
            v: a.moments().1.to_vec(),
            step: a.steps(),
        };
        let manifest = CheckpointManifest {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            m: self.m,
            config: self.config.clone(),
            log_alpha: self.log_alpha,
            networks: nets.iter().map(|(n, _)| format!("{n}.txt")).collect(),
            actor_opt: opt(&self.actor_opt),
            critic_opts: [opt(&self.critic_opts[0]), opt(&self.critic_opts[1])],
            alpha_opt: opt(&self.alpha_opt),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &manifest)?;
        Ok(())
    }

    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
        let load = |name: &str| Mlp::load(BufReader::new(File::open(dir.join(format!("{name}.txt")))?));
        let adam = |s: &OptimizerSnapshot, lr: f64| -> Result<Adam> {
            let mut a = Adam::new(s.m.len(), AdamConfig { lr, ..Default::default() });
            a.restore(s.m.clone(), s.v.clone(), s.step)?;
            Ok(a)
        };
        let cfg = manifest.config;
        let agent = Self {
            obs_dim: manifest.obs_dim,
            act_dim: manifest.act_dim,
            m: manifest.m,
            actor: load("actor")?,
            critics: [load("critic1")?, load("critic2")?],
            targets: [load("target1")?, load("target2")?],
            actor_opt: adam(&manifest.actor_opt, cfg.lr_actor)?,
            critic_opts: [
                adam(&manifest.critic_opts[0], cfg.lr_critic)?,
                adam(&manifest.critic_opts[1], cfg.lr_critic)?,
            ],
            alpha_opt: adam(&manifest.alpha_opt, cfg.lr_alpha)?,
            log_alpha: manifest.log_alpha,
            config: cfg,
        };
        check_dim(agent.obs_dim + agent.m, agent.actor.input_dim())?;
        check_dim(2 * agent.act_dim, agent.actor.output_dim())?;
        Ok(agent)
    }

    fn named_networks(&self) -> [(&'static str, &Mlp); 5] {
        [
            ("actor", &self.actor),
            ("critic1", &self.critics[0]),
            ("critic2", &self.critics[1]),
            ("target1", &self.targets[0]),
            ("target2", &self.targets[1]),
        ]
    }

    /// Bit-level equality of every network and optimizer state.
    pub fn same_state(&self, other: &Agent) -> bool {
        self.actor == other.actor
            && self.critics == other.critics
            && self.targets == other.targets
            && self.actor_opt == other.actor_opt
            && self.critic_opts == other.critic_opts
            && self.log_alpha.to_bits() == other.log_alpha.to_bits()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OptimizerSnapshot {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    obs_dim: usize,
    act_dim: usize,
    m: usize,
    config: AgentConfig,
    log_alpha: f64,
    networks: Vec<String>,
    actor_opt: OptimizerSnapshot,
    critic_opts: [OptimizerSnapshot; 2],
    alpha_opt: OptimizerSnapshot,
}
