//! Replay storage with hindsight preference relabeling.
//!
//! Original transitions and their relabeled copies live in two FIFO pools so
//! that a minibatch can draw an exact fraction `ρ` of relabeled entries.
//! Relabels are materialized eagerly: `K` Dirichlet neighbours at every
//! insertion, and one return-aligned copy of every transition when the
//! episode ends.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::pref::{PreferenceVector, RewardVector, ReturnVector};
use crate::relabel::{neighborhood_relabel, return_aligned_relabel, RelabelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: RewardVector,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub preference: PreferenceVector,
    pub relabeled: bool,
}

impl Transition {
    pub fn new(
        state: Vec<f64>,
        action: Vec<f64>,
        reward: RewardVector,
        next_state: Vec<f64>,
        done: bool,
        preference: PreferenceVector,
    ) -> Result<Self> {
        check_dim(state.len(), next_state.len())?;
        check_dim(preference.dim(), reward.dim())?;
        if state.iter().chain(&action).chain(&next_state).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transition"));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            done,
            preference,
            relabeled: false,
        })
    }

    /// Copy carrying a different preference; reward and dynamics untouched.
    pub fn relabel(&self, preference: PreferenceVector) -> Self {
        Self {
            preference,
            relabeled: true,
            ..self.clone()
        }
    }

    /// True when both transitions describe the same environment step.
    pub fn same_experience(&self, other: &Transition) -> bool {
        self.state == other.state
            && self.action == other.action
            && self.reward == other.reward
            && self.next_state == other.next_state
            && self.done == other.done
    }
}

/// One episode's transitions together with its discounted return.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    transitions: Vec<Transition>,
    ret: ReturnVector,
    behavior_preference: PreferenceVector,
    gamma: f64,
    discount: f64,
}

impl EpisodeTrace {
    pub fn new(behavior_preference: PreferenceVector, gamma: f64) -> Self {
        Self {
            transitions: Vec::new(),
            ret: ReturnVector::zeros(behavior_preference.dim()),
            behavior_preference,
            gamma,
            discount: 1.0,
        }
    }

    /// Appends a step and folds `γᵗ r` into the running return.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.transitions.last().is_some_and(|last| last.done) {
            return Err(Error::Env("transition appended after a terminal step".into()));
        }
        self.ret.add_discounted(&t.reward, self.discount)?;
        self.discount *= self.gamma;
        self.transitions.push(t);
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episode_return(&self) -> &ReturnVector {
        &self.ret
    }

    pub fn behavior_preference(&self) -> &PreferenceVector {
        &self.behavior_preference
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Pool {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl Pool {
    fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        }
    }

    fn push(&mut self, t: Transition) -> bool {
        if self.capacity == 0 {
            return false;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        true
    }

    fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R, out: &mut Vec<&'a Transition>) {
        let len = self.items.len();
        for _ in 0..n {
            out.push(&self.items[rng.random_range(0..len)]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    original: Pool,
    relabeled: Pool,
}

/// Number of relabeled draws in a minibatch of `batch` at fraction `rho`.
pub fn relabeled_count(batch: usize, rho: f64) -> usize {
    // Slack keeps products such as 0.7·10 from rounding up past the integer.
    ((rho * batch as f64) - 1e-9).ceil().max(0.0) as usize
}

impl ReplayBuffer {
    /// `capacity` bounds the original pool; the relabeled pool holds
    /// `relabels_per_step × capacity` entries.
    pub fn new(capacity: usize, relabels_per_step: usize) -> Self {
        Self {
            original: Pool::new(capacity),
            relabeled: Pool::new(capacity.saturating_mul(relabels_per_step)),
        }
    }

    pub fn for_config(capacity: usize, cfg: &RelabelConfig) -> Self {
        Self::new(capacity, cfg.k)
    }

    pub fn capacity(&self) -> usize {
        self.original.capacity
    }

    pub fn relabeled_capacity(&self) -> usize {
        self.relabeled.capacity
    }

    pub fn original_len(&self) -> usize {
        self.original.items.len()
    }

    pub fn relabeled_len(&self) -> usize {
        self.relabeled.items.len()
    }

    /// Total insertions per pool, including evicted entries.
    pub fn inserted(&self) -> (u64, u64) {
        (self.original.inserted, self.relabeled.inserted)
    }

    pub fn originals(&self) -> impl Iterator<Item = &Transition> {
        self.original.items.iter()
    }

    pub fn relabels(&self) -> impl Iterator<Item = &Transition> {
        self.relabeled.items.iter()
    }

    /// Stores an original transition without any relabeling.
    pub fn push_original(&mut self, t: Transition) -> Result<()> {
        if t.relabeled {
            return Err(Error::Config("original pool only takes unrelabeled transitions".into()));
        }
        self.original.push(t);
        Ok(())
    }

    fn push_relabeled(&mut self, t: Transition) -> bool {
        debug_assert!(t.relabeled);
        self.relabeled.push(t)
    }

    /// Stores `t` and up to `K` accepted neighborhood relabels, filtered
    /// against the episode's running return `g_so_far`. Returns the number of
    /// entries stored.
    pub fn insert<R: Rng + ?Sized>(
        &mut self,
        t: Transition,
        g_so_far: &ReturnVector,
        cfg: &RelabelConfig,
        rng: &mut R,
    ) -> Result<usize> {
        check_dim(t.reward.dim(), g_so_far.dim())?;
        let candidates = neighborhood_relabel(&t.preference, cfg, rng);
        let mut stored = 1;
        for pref in candidates {
            if cfg.accepts(&pref, &t.preference, g_so_far) && self.push_relabeled(t.relabel(pref.clone())) {
                stored += 1;
            }
        }
        self.push_original(t)?;
        Ok(stored)
    }

    /// Return-aligned relabeling at episode end: every transition of the
    /// trace is copied with `ŵ` when `ŵ` passes the filter against the full
    /// episode return.
    pub fn finalize_episode(&mut self, trace: &EpisodeTrace, cfg: &RelabelConfig) -> Result<usize> {
        if trace.is_empty() {
            return Err(Error::Empty("episode trace"));
        }
        let g = trace.episode_return();
        let behavior = trace.behavior_preference();
        let target = return_aligned_relabel(g, behavior, cfg.lambda)?;
        if !cfg.accepts(&target, behavior, g) {
            return Ok(0);
        }
        let mut stored = 0;
        for t in trace.transitions() {
            if self.push_relabeled(t.relabel(target.clone())) {
                stored += 1;
            }
        }
        Ok(stored)
    }

    /// Draws `⌈ρB⌉` relabeled and the rest original transitions, uniformly
    /// with replacement. Falls back to originals only when no relabels exist.
    pub fn sample_minibatch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rho: f64,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must be in [0, 1], got {rho}")));
        }
        let (n_orig, n_rel) = (self.original_len(), self.relabeled_len());
        if n_orig == 0 && n_rel == 0 {
            return Err(Error::Empty("replay buffer"));
        }
        let mut want_rel = if n_rel == 0 { 0 } else { relabeled_count(batch, rho) };
        if n_orig == 0 {
            want_rel = batch;
        }
        let mut out = Vec::with_capacity(batch);
        self.relabeled.sample(want_rel, rng, &mut out);
        self.original.sample(batch - want_rel, rng, &mut out);
        Ok(out)
    }

    /// Uniform draw from the original pool only (relabeling-free baseline).
    pub fn sample_uniform<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.original_len() == 0 {
            return Err(Error::Empty("replay buffer"));
        }
        let mut out = Vec::with_capacity(batch);
        self.original.sample(batch, rng, &mut out);
        Ok(out)
    }

    /// Writes a text snapshot: one header line
    /// `obs_dim act_dim m n_original n_relabeled`, then one line per entry:
    /// `pool state.. action.. reward.. next_state.. done preference..` with
    /// `pool` 0 for original and 1 for relabeled.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.original.items.front().or(self.relabeled.items.front()) else {
            writeln!(out, "0 0 0 0 0")?;
            return Ok(());
        };
        writeln!(
            out,
            "{} {} {} {} {}",
            first.state.len(),
            first.action.len(),
            first.reward.dim(),
            self.original_len(),
            self.relabeled_len()
        )?;
        for (flag, t) in self
            .original
            .items
            .iter()
            .map(|t| (0, t))
            .chain(self.relabeled.items.iter().map(|t| (1, t)))
        {
            let mut row = vec![flag.to_string()];
            let fields = t
                .state
                .iter()
                .chain(&t.action)
                .chain(t.reward.values())
                .chain(&t.next_state);
            row.extend(fields.map(|v| format!("{v:?}")));
            row.push(u8::from(t.done).to_string());
            row.extend(t.preference.weights().iter().map(|v| format!("{v:?}")));
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// Reads a snapshot written by [`write_snapshot`](Self::write_snapshot)
    /// into a buffer with the given capacities.
    pub fn read_snapshot<R: BufRead>(input: R, capacity: usize, relabels_per_step: usize) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(Error::Empty("snapshot"))??;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Format(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        let [obs, act, m, n_orig, n_rel] = dims[..] else {
            return Err(Error::Format(format!("bad header `{header}`")));
        };
        let mut buf = Self::new(capacity, relabels_per_step);
        let width = 1 + 2 * obs + act + m + 1 + m;
        for line in lines.take(n_orig + n_rel) {
            let line = line?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::Format(format!("bad value `{s}`"))))
                .collect::<Result<_>>()?;
            if v.len() != width {
                return Err(Error::Format(format!("row has {} fields, want {width}", v.len())));
            }
            let mut at = 1;
            let mut take = |n: usize| {
                let s = v[at..at + n].to_vec();
                at += n;
                s
            };
            let state = take(obs);
            let action = take(act);
            let reward = RewardVector::new(take(m))?;
            let next_state = take(obs);
            let done = take(1)[0] != 0.0;
            let pref = PreferenceVector::new(take(m))?;
            let t = Transition::new(state, action, reward, next_state, done, pref)?;
            if v[0] == 0.0 {
                buf.push_original(t)?;
            } else {
                let t = Transition { relabeled: true, ..t };
                buf.push_relabeled(t);
            }
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::relabel::{accept_cosine, AcceptanceFilter};

    fn pref(v: &[f64]) -> PreferenceVector {
        PreferenceVector::new(v.to_vec()).unwrap()
    }

    fn step(i: usize, w: &[f64], reward: [f64; 2], done: bool) -> Transition {
        Transition::new(
            vec![i as f64],
            vec![0.1 * i as f64],
            RewardVector::new(reward.to_vec()).unwrap(),
            vec![i as f64 + 1.0],
            done,
            pref(w),
        )
        .unwrap()
    }

    fn ret(v: &[f64]) -> ReturnVector {
        ReturnVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn no_relabels_when_k_is_zero() {
        let mut buf = ReplayBuffer::new(16, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = buf
            .insert(step(0, &[0.5, 0.5], [1.0, 0.0], false), &ret(&[1.0, 0.0]), &RelabelConfig::disabled(), &mut rng)
            .unwrap();
        assert_eq!(n, 1);
        assert_eq!(buf.relabeled_len(), 0);
        assert_eq!(buf.original_len(), 1);
    }

    #[test]
    fn unfiltered_insert_stores_all_relabels() {
        let cfg = RelabelConfig { k: 4, ..Default::default() };
        let mut buf = ReplayBuffer::for_config(16, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = buf
            .insert(step(0, &[0.5, 0.5], [1.0, 0.0], false), &ret(&[1.0, 0.0]), &cfg, &mut rng)
            .unwrap();
        assert_eq!(n, 5);
        assert_eq!(buf.relabeled_len(), 4);
        let orig = buf.originals().next().unwrap();
        for r in buf.relabels() {
            assert!(r.relabeled && r.same_experience(orig));
        }
    }

    #[test]
    fn cosine_filtered_insert_matches_replayed_draws() {
        let cfg = RelabelConfig {
            k: 4,
            kappa: 10.0,
            filter: AcceptanceFilter::Cosine { tau: 0.7 },
            ..Default::default()
        };
        let g = ret(&[10.0, 0.0]);
        let behavior = pref(&[0.6, 0.4]);
        for seed in 0..50 {
            let mut buf = ReplayBuffer::for_config(16, &cfg);
            let n = buf
                .insert(step(0, behavior.weights(), [10.0, 0.0], false), &g, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            let draws = neighborhood_relabel(&behavior, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let accepted: Vec<_> = draws.into_iter().filter(|d| accept_cosine(d, &g, 0.7)).collect();
            assert_eq!(n, 1 + accepted.len());
            let stored: Vec<_> = buf.relabels().map(|t| t.preference.clone()).collect();
            assert_eq!(stored, accepted);
        }
    }

    #[test]
    fn finalize_single_step_episode() {
        let cfg = RelabelConfig { k: 1, ..Default::default() };
        let mut buf = ReplayBuffer::for_config(8, &cfg);
        let mut trace = EpisodeTrace::new(pref(&[0.5, 0.5]), 0.99);
        trace.push(step(0, &[0.5, 0.5], [1.0, 0.0], true)).unwrap();
        assert_eq!(buf.finalize_episode(&trace, &cfg).unwrap(), 1);
    }

    #[test]
    fn finalize_uses_softplus_target() {
        let cfg = RelabelConfig { k: 2, lambda: 1.0, ..Default::default() };
        let mut buf = ReplayBuffer::for_config(8, &cfg);
        let mut trace = EpisodeTrace::new(pref(&[0.3, 0.7]), 1.0);
        trace.push(step(0, &[0.3, 0.7], [1.0, -0.5], false)).unwrap();
        trace.push(step(1, &[0.3, 0.7], [1.0, -0.5], true)).unwrap();
        assert_eq!(trace.episode_return().values(), &[2.0, -1.0]);
        assert_eq!(buf.finalize_episode(&trace, &cfg).unwrap(), 2);
        for t in buf.relabels() {
            assert_abs_diff_eq!(t.preference.weights()[0], 0.87162, epsilon = 1e-5);
            assert_abs_diff_eq!(t.preference.weights()[1], 0.12838, epsilon = 1e-5);
        }
    }

    #[test]
    fn finalize_rejected_by_utility_filter() {
        let cfg = RelabelConfig {
            k: 2,
            filter: AcceptanceFilter::Utility { epsilon: 0.0 },
            ..Default::default()
        };
        let mut buf = ReplayBuffer::for_config(8, &cfg);
        // Behavior puts all weight on the larger objective; the softplus
        // target is flatter, so ŵᵀG < wᵀG.
        let mut trace = EpisodeTrace::new(pref(&[1.0, 0.0]), 1.0);
        trace.push(step(0, &[1.0, 0.0], [3.0, 0.0], true)).unwrap();
        assert_eq!(buf.finalize_episode(&trace, &cfg).unwrap(), 0);
        assert_eq!(buf.relabeled_len(), 0);
    }

    #[test]
    fn finalize_empty_trace_fails() {
        let mut buf = ReplayBuffer::new(8, 1);
        let trace = EpisodeTrace::new(pref(&[0.5, 0.5]), 1.0);
        assert!(buf.finalize_episode(&trace, &RelabelConfig::default()).is_err());
    }

    #[test]
    fn trace_rejects_steps_after_terminal() {
        let mut trace = EpisodeTrace::new(pref(&[0.5, 0.5]), 1.0);
        trace.push(step(0, &[0.5, 0.5], [1.0, 0.0], true)).unwrap();
        assert!(trace.push(step(1, &[0.5, 0.5], [1.0, 0.0], false)).is_err());
    }

    fn filled(n_orig: usize, n_rel: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(256, 4);
        for i in 0..n_orig {
            buf.push_original(step(i, &[0.5, 0.5], [0.0, 0.0], false)).unwrap();
        }
        for i in 0..n_rel {
            buf.push_relabeled(step(i, &[0.5, 0.5], [0.0, 0.0], false).relabel(pref(&[0.2, 0.8])));
        }
        buf
    }

    #[test]
    fn minibatch_split() {
        let buf = filled(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let count = |b: &[&Transition]| b.iter().filter(|t| t.relabeled).count();
        let b = buf.sample_minibatch(64, 0.5, &mut rng).unwrap();
        assert_eq!((b.len(), count(&b)), (64, 32));
        let b = buf.sample_minibatch(64, 0.3, &mut rng).unwrap();
        assert_eq!((b.len(), count(&b)), (64, 20));
        let b = buf.sample_minibatch(10, 0.7, &mut rng).unwrap();
        assert_eq!(count(&b), 7);
        let only_orig = filled(10, 0);
        let b = only_orig.sample_minibatch(64, 0.5, &mut rng).unwrap();
        assert_eq!((b.len(), count(&b)), (64, 0));
        let only_rel = filled(0, 5);
        let b = only_rel.sample_minibatch(8, 0.25, &mut rng).unwrap();
        assert_eq!((b.len(), count(&b)), (8, 8));
        assert!(filled(0, 0).sample_minibatch(8, 0.5, &mut rng).is_err());
    }

    #[test]
    fn rho_zero_sampling_matches_uniform_baseline() {
        let buf = filled(37, 12);
        let a: Vec<_> = buf.sample_minibatch(64, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b: Vec<_> = buf.sample_uniform(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(5, 1);
        for i in 0..8 {
            buf.push_original(step(i, &[0.5, 0.5], [0.0, 0.0], false)).unwrap();
        }
        let states: Vec<f64> = buf.originals().map(|t| t.state[0]).collect();
        assert_eq!(states, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(buf.inserted().0, 8);
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = RelabelConfig { k: 2, ..Default::default() };
        let mut buf = ReplayBuffer::for_config(4, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..6 {
            buf.insert(step(i, &[0.25, 0.75], [0.5, -1.5], i == 5), &ret(&[0.5, -1.5]), &cfg, &mut rng)
                .unwrap();
        }
        let mut bytes = Vec::new();
        buf.write_snapshot(&mut bytes).unwrap();
        let back = ReplayBuffer::read_snapshot(&bytes[..], 4, 2).unwrap();
        assert!(buf.originals().eq(back.originals()));
        assert!(buf.relabels().eq(back.relabels()));
    }
}
