use hpr_core::agent::ActMode;
use hpr_core::envs::{Environment, TwoObjectiveBandit, POINT_MASS_ID};
use hpr_core::harness::{train_seed, Algorithm, RunConfig};
use hpr_core::metrics::{archive_hypervolume, eum, nondominated, sparsity};
use hpr_core::pref::{scalarize, PreferenceVector, ReturnVector};
use hpr_core::relabel::AcceptanceFilter;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_bandit(total: u64) -> RunConfig {
    let mut cfg = RunConfig::bandit(total, total / 2, vec![1]);
    cfg.grid_size = 21;
    cfg.agent.hidden = vec![32, 32];
    cfg.agent.warmup_steps = 200;
    cfg
}

#[test]
fn trained_bandit_policy_respects_preferences() {
    let out = train_seed(&small_bandit(3000), 1).unwrap();
    assert!(out.log.diverged.is_none());
    let mut env = TwoObjectiveBandit::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut reward_for = |w: &PreferenceVector| {
        let s = env.reset(0).unwrap();
        let a = out.agent.act(&s, w, ActMode::Deterministic, &mut rng).unwrap();
        env.step(&a).unwrap().reward
    };
    let first = PreferenceVector::pair(1.0).unwrap();
    let second = PreferenceVector::pair(0.0).unwrap();
    let (r_first, r_second) = (reward_for(&first), reward_for(&second));
    let own = scalarize(&first, &r_first).unwrap();
    let other = scalarize(&first, &r_second).unwrap();
    assert!(own >= other - 0.05, "{own} vs {other}");
    let own = scalarize(&second, &r_second).unwrap();
    let other = scalarize(&second, &r_first).unwrap();
    assert!(own >= other - 0.05, "{own} vs {other}");
}

#[test]
fn relabels_do_not_consume_environment_steps() {
    for (k, filter) in [
        (0, AcceptanceFilter::None),
        (4, AcceptanceFilter::None),
        (2, AcceptanceFilter::Cosine { tau: 0.9 }),
    ] {
        let mut cfg = small_bandit(600);
        cfg.relabel.k = k;
        cfg.relabel.filter = filter;
        let log = train_seed(&cfg, 1).unwrap().log;
        assert_eq!(log.env_steps, 600);
        assert_eq!(log.original_inserts, 600);
        assert_eq!(log.eval_env_steps, 2 * 21);
        if k == 4 {
            // Four neighbours per step plus one return-aligned copy per
            // one-step episode.
            assert_eq!(log.relabeled_inserts, 600 * 5);
        }
    }
}

#[test]
fn baseline_and_disabled_relabeling_match_on_point_mass() {
    let mut base = small_bandit(300);
    base.env = POINT_MASS_ID.into();
    base.agent.warmup_steps = 100;
    base.algorithm = Algorithm::Baseline;
    let mut hpr = base.clone();
    hpr.algorithm = Algorithm::Hpr;
    hpr.relabel.k = 0;
    hpr.rho = 0.0;
    let a = train_seed(&base, 2).unwrap();
    let b = train_seed(&hpr, 2).unwrap();
    assert_eq!(a.buffer, b.buffer);
    assert!(a.agent.same_state(&b.agent));
    assert_eq!(a.log.rows, b.log.rows);
    assert_eq!(a.log.final_records, b.log.final_records);
}

#[test]
fn point_mass_logs_are_consistent() {
    let mut cfg = small_bandit(256);
    cfg.env = POINT_MASS_ID.into();
    cfg.eval_every = 64;
    cfg.agent.warmup_steps = 64;
    let log = train_seed(&cfg, 3).unwrap().log;
    assert_eq!(log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![64, 128, 192, 256]);
    assert_eq!(log.hv_reference, vec![-64.0, -64.0]);
    // 32-step episodes, so every grid rollout runs to the horizon.
    assert_eq!(log.eval_env_steps, 4 * 21 * 32);
    let returns: Vec<ReturnVector> = log.final_records.iter().map(|r| r.vector_return.clone()).collect();
    let archive = nondominated(&returns);
    let last = log.final_row().unwrap();
    assert_eq!(last.hv, archive_hypervolume(&archive, &log.hv_reference).unwrap());
    assert_eq!(last.eum, eum(&log.final_records).unwrap());
    assert_eq!(last.sparsity, sparsity(&archive));
    assert!(log.rows.iter().all(|r| r.eum.is_finite() && r.hv.is_finite() && r.sparsity.is_finite()));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
