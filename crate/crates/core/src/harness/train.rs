use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Algorithm, EvalRow, RunConfig, RunLog};
use crate::agent::{ActMode, Agent};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::metrics::{archive_hypervolume, eum, nondominated, sparsity, EvalRecord, ParetoArchive};
use crate::pref::{PreferenceVector, ReturnVector};
use crate::relabel::sample_uniform_simplex;
use crate::replay::{EpisodeTrace, ReplayBuffer, Transition};

const INIT_STREAM: u64 = 0;
const ACT_STREAM: u64 = 1;
const RELABEL_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

/// Reset seed shared by every evaluation rollout.
const EVAL_RESET_SEED: u64 = 0;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `g` evenly spaced two-objective weights `(i/(g−1), 1 − i/(g−1))`.
pub fn preference_grid(grid_size: usize) -> Result<Vec<PreferenceVector>> {
    if grid_size < 2 {
        return Err(Error::Config(format!("grid_size must be >= 2, got {grid_size}")));
    }
    let last = (grid_size - 1) as f64;
    (0..grid_size).map(|i| PreferenceVector::pair(i as f64 / last)).collect()
}

/// Result of evaluating a policy on the preference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    pub archive: ParetoArchive,
    pub eum: f64,
    pub hv: f64,
    pub sparsity: f64,
    pub mean_return: Vec<f64>,
    /// Environment steps spent on the rollouts.
    pub env_steps: u64,
}

impl Evaluation {
    pub fn row(&self) -> EvalRow {
        let (step, seed) = self.records.first().map_or((0, 0), |r| (r.step, r.seed));
        EvalRow {
            step,
            seed,
            eum: self.eum,
            hv: self.hv,
            sparsity: self.sparsity,
            mean_return: self.mean_return.clone(),
            front_size: self.archive.len(),
        }
    }
}

/// One deterministic episode per grid preference; undiscounted returns.
pub fn evaluate_policy<E: Environment + ?Sized>(
    agent: &Agent,
    env: &mut E,
    grid_size: usize,
    reference: &[f64],
    step: u64,
    seed: u64,
) -> Result<Evaluation> {
    let spec = env.spec().clone();
    if spec.m != 2 {
        return Err(Error::Config(format!("evaluation grid needs two objectives, env has {}", spec.m)));
    }
    // Deterministic acting never touches the generator.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut records = Vec::with_capacity(grid_size);
    let mut env_steps = 0;
    for w in preference_grid(grid_size)? {
        let mut state = env.reset(EVAL_RESET_SEED)?;
        let mut g = vec![0.0; spec.m];
        for _ in 0..spec.horizon {
            let action = finite_action(agent.act(&state, &w, ActMode::Deterministic, &mut unused)?, step)?;
            let out = env.step(&action)?;
            env_steps += 1;
            for (gi, r) in g.iter_mut().zip(out.reward.values()) {
                *gi += r;
            }
            if out.done() {
                break;
            }
            state = out.observation;
        }
        records.push(EvalRecord {
            preference: w,
            vector_return: ReturnVector::new(g)?,
            step,
            seed,
        });
    }
    let returns: Vec<ReturnVector> = records.iter().map(|r| r.vector_return.clone()).collect();
    let archive = nondominated(&returns);
    let n = records.len() as f64;
    let mean_return = (0..spec.m)
        .map(|j| returns.iter().map(|g| g.values()[j]).sum::<f64>() / n)
        .collect();
    Ok(Evaluation {
        eum: eum(&records)?,
        hv: archive_hypervolume(&archive, reference)?,
        sparsity: sparsity(&archive),
        archive,
        records,
        mean_return,
        env_steps,
    })
}

/// A finished single-seed run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: RunLog,
    pub agent: Agent,
    pub buffer: ReplayBuffer,
}

fn finite_action(action: Vec<f64>, step: u64) -> Result<Vec<f64>> {
    if action.iter().all(|a| a.is_finite()) {
        Ok(action)
    } else {
        Err(Error::Divergence(format!("non-finite action at step {step}")))
    }
}

/// Runs the training loop for one seed. Divergence (a non-finite loss or
/// action) stops the run and is recorded in `log.diverged`; other failures
/// are returned as errors.
pub fn train_seed(cfg: &RunConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let env = cfg.open_env()?;
    let spec = env.spec().clone();
    let reference = cfg.reference_for(&spec)?;
    let relabel = cfg.effective_relabel();
    let agent = Agent::new(spec.obs_dim, spec.act_dim, spec.m, cfg.agent.clone(), &mut stream(seed, INIT_STREAM))?;
    let mut run = Run {
        cfg,
        seed,
        env,
        eval_env: cfg.open_env()?,
        reference: reference.clone(),
        agent,
        buffer: ReplayBuffer::for_config(cfg.buffer_capacity, &relabel),
        relabel,
        log: RunLog {
            env: spec.id.clone(),
            algorithm: cfg.algorithm,
            seed,
            hv_reference: reference,
            env_steps: 0,
            eval_env_steps: 0,
            updates: 0,
            original_inserts: 0,
            relabeled_inserts: 0,
            rows: Vec::new(),
            final_records: Vec::new(),
            final_archive: ParetoArchive::default(),
            diverged: None,
        },
    };
    match run.drive() {
        Ok(()) => {}
        Err(Error::Divergence(msg)) => run.log.diverged = Some(msg),
        Err(e) => return Err(e),
    }
    (run.log.original_inserts, run.log.relabeled_inserts) = run.buffer.inserted();
    Ok(TrainOutcome {
        log: run.log,
        agent: run.agent,
        buffer: run.buffer,
    })
}

struct Run<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    env: Box<dyn Environment + Send>,
    eval_env: Box<dyn Environment + Send>,
    reference: Vec<f64>,
    agent: Agent,
    buffer: ReplayBuffer,
    relabel: crate::relabel::RelabelConfig,
    log: RunLog,
}

impl Run<'_> {
    fn drive(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let spec = self.env.spec().clone();
        let gamma = cfg.agent.gamma;
        let batch_size = cfg.agent.batch_size;
        let mut act_rng = stream(self.seed, ACT_STREAM);
        let mut relabel_rng = stream(self.seed, RELABEL_STREAM);
        let mut train_rng = stream(self.seed, TRAIN_STREAM);

        let mut trace: Option<EpisodeTrace> = None;
        let mut state = Vec::new();
        for step in 1..=cfg.total_steps {
            let episode = match &mut trace {
                Some(t) => t,
                None => {
                    let w = sample_uniform_simplex(spec.m, &mut act_rng);
                    state = self.env.reset(act_rng.random())?;
                    trace.insert(EpisodeTrace::new(w, gamma))
                }
            };
            let w = episode.behavior_preference().clone();
            let action = self.agent.act(&state, &w, ActMode::Stochastic, &mut act_rng)?;
            let action = finite_action(action, step)?;
            let out = self.env.step(&action)?;
            self.log.env_steps += 1;

            let transition = Transition::new(
                std::mem::take(&mut state),
                action,
                out.reward.clone(),
                out.observation.clone(),
                out.terminated,
                w,
            )?;
            episode.push(transition.clone())?;
            match cfg.algorithm {
                Algorithm::Baseline => self.buffer.push_original(transition)?,
                Algorithm::Hpr => {
                    self.buffer
                        .insert(transition, episode.episode_return(), &self.relabel, &mut relabel_rng)?;
                }
            }
            let episode_over = out.done() || episode.len() >= spec.horizon;
            state = out.observation;

            if episode_over {
                if cfg.algorithm == Algorithm::Hpr {
                    self.buffer.finalize_episode(episode, &self.relabel)?;
                }
                trace = None;
            }

            if step > cfg.agent.warmup_steps as u64 {
                for _ in 0..cfg.agent.updates_per_step {
                    let batch = match cfg.algorithm {
                        Algorithm::Baseline => self.buffer.sample_uniform(batch_size, &mut train_rng)?,
                        Algorithm::Hpr => self.buffer.sample_minibatch(batch_size, cfg.rho, &mut train_rng)?,
                    };
                    self.agent.update(&batch, &mut train_rng).map_err(|e| match e {
                        Error::Divergence(msg) => Error::Divergence(format!("step {step}: {msg}")),
                        other => other,
                    })?;
                    self.log.updates += 1;
                }
            }

            if step % cfg.eval_every == 0 || step == cfg.total_steps {
                let eval = evaluate_policy(
                    &self.agent,
                    &mut self.eval_env,
                    cfg.grid_size,
                    &self.reference,
                    step,
                    self.seed,
                )?;
                self.log.eval_env_steps += eval.env_steps;
                self.log.rows.push(eval.row());
                self.log.final_archive = eval.archive;
                self.log.final_records = eval.records;
            }
        }
        Ok(())
    }
}

/// Trains every configured seed on its own thread and returns the logs in
/// seed order.
pub fn run_training(cfg: &RunConfig) -> Result<Vec<RunLog>> {
    cfg.validate()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_seed(cfg, seed).map(|o| o.log)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Config("training thread panicked".into()))))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{analytic_front, TwoObjectiveBandit, BANDIT_ID};
    use crate::metrics::hypervolume2d;

    fn tiny(total: u64, eval_every: u64) -> RunConfig {
        let mut cfg = RunConfig::bandit(total, eval_every, vec![3]);
        cfg.grid_size = 11;
        cfg.agent.hidden = vec![8, 8];
        cfg.agent.batch_size = 8;
        cfg.agent.warmup_steps = 20;
        cfg.buffer_capacity = 500;
        cfg
    }

    #[test]
    fn grid_weights() {
        let g2 = preference_grid(2).unwrap();
        assert_eq!(g2[0].weights(), &[0.0, 1.0]);
        assert_eq!(g2[1].weights(), &[1.0, 0.0]);
        let g11 = preference_grid(11).unwrap();
        for (i, w) in g11.iter().enumerate() {
            assert!((w.weights()[0] - i as f64 / 10.0).abs() < 1e-15);
        }
        assert!(preference_grid(1).is_err());
    }

    #[test]
    fn untrained_agent_stays_under_true_front() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let agent = Agent::new(1, 1, 2, Default::default(), &mut rng).unwrap();
        let mut env = TwoObjectiveBandit::new();
        let reference = [-2.0, -2.0];
        let eval = evaluate_policy(&agent, &mut env, 101, &reference, 0, 0).unwrap();
        let front_hv = hypervolume2d(&analytic_front(BANDIT_ID, 2001).unwrap(), &reference).unwrap();
        // The sampled front lower-bounds the true one; allow its chord error.
        assert!(eval.hv <= front_hv + 1e-6, "{} > {}", eval.hv, front_hv);
        assert_eq!(eval.records.len(), 101);
        assert_eq!(eval.env_steps, 101);
    }

    #[test]
    fn eval_cadence_and_budget() {
        let cfg = tiny(250, 100);
        let log = train_seed(&cfg, 3).unwrap().log;
        let steps: Vec<u64> = log.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![100, 200, 250]);
        assert_eq!(log.env_steps, 250);
        assert_eq!(log.original_inserts, 250);
        assert!(log.relabeled_inserts > 0);
        assert_eq!(log.updates, 230);
        assert!(log.diverged.is_none());
    }

    #[test]
    fn logged_metrics_match_stored_records() {
        let log = train_seed(&tiny(120, 60), 3).unwrap().log;
        let last = log.final_row().unwrap();
        let returns: Vec<ReturnVector> = log.final_records.iter().map(|r| r.vector_return.clone()).collect();
        let archive = nondominated(&returns);
        assert_eq!(archive, log.final_archive);
        assert_eq!(last.eum, eum(&log.final_records).unwrap());
        assert_eq!(last.hv, archive_hypervolume(&archive, &log.hv_reference).unwrap());
        assert_eq!(last.sparsity, sparsity(&archive));
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = tiny(150, 50);
        let a = train_seed(&cfg, 3).unwrap();
        let b = train_seed(&cfg, 3).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.buffer, b.buffer);
        assert!(a.agent.same_state(&b.agent));
        let c = train_seed(&cfg, 4).unwrap();
        assert_ne!(a.log.rows, c.log.rows);
    }

    #[test]
    fn divergence_is_flagged() {
        let mut cfg = tiny(100, 50);
        cfg.agent.lr_critic = 1e300;
        cfg.agent.lr_actor = 1e300;
        let log = train_seed(&cfg, 3).unwrap().log;
        assert!(log.diverged.is_some());
        assert!(log.env_steps < 100);
    }
}
