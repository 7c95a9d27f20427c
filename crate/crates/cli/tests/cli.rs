use std::path::Path;
use std::process::{Command, Output};

const HPR: &str = env!("CARGO_BIN_EXE_hpr");

fn hpr(root: &Path, args: &[&str]) -> Output {
    Command::new(HPR)
        .env("HPR_OUTPUT_ROOT", root)
        .args(args)
        .output()
        .expect("spawn hpr")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--total-steps",
    "120",
    "--eval-every",
    "60",
    "--seeds",
    "0,1",
    "--grid-size",
    "11",
    "--warmup-steps",
    "40",
    "--batch-size",
    "16",
    "--hidden",
    "8,8",
];

fn train(root: &Path, dir: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--output-dir", dir];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    hpr(root, &args)
}

#[test]
fn train_compare_and_front() {
    let root = tempfile::tempdir().unwrap();
    let a = train(root.path(), "hpr", &["--k", "2", "--rho", "0.5", "--filter", "cosine:0.5"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("seed 0: steps 120"));
    let b = train(root.path(), "base", &["--algorithm", "baseline"]);
    assert!(b.status.success());

    let hpr_dir = root.path().join("hpr");
    for seed in ["seed-0", "seed-1"] {
        let jsonl = std::fs::read_to_string(hpr_dir.join(seed).join("eval.jsonl")).unwrap();
        assert_eq!(jsonl.lines().count(), 2);
        assert!(hpr_dir.join(seed).join("run.json").is_file());
    }
    let saved = std::fs::read_to_string(hpr_dir.join("config.toml")).unwrap();
    assert!(saved.contains("kind = \"cosine\""));

    let report_path = root.path().join("table.txt");
    let cmp = hpr(
        root.path(),
        &[
            "compare",
            hpr_dir.to_str().unwrap(),
            root.path().join("base").to_str().unwrap(),
            "--out",
            report_path.to_str().unwrap(),
        ],
    );
    assert!(cmp.status.success(), "{}", String::from_utf8_lossy(&cmp.stderr));
    let table = stdout(&cmp);
    assert!(table.starts_with("env | method | seeds | EUM ↑ | Sparsity ↓ | HV ↑ (×10⁶) | HV p-value"));
    assert!(table.contains("| hpr | 2 |"));
    assert!(table.contains("| baseline | 2 |"));
    assert_eq!(std::fs::read_to_string(&report_path).unwrap(), table);

    let front = hpr(root.path(), &["front", hpr_dir.to_str().unwrap()]);
    assert!(front.status.success());
    let csv = std::fs::read_to_string(hpr_dir.join("front.csv")).unwrap();
    assert!(csv.starts_with("g1,g2\n"));
    assert!(csv.lines().count() >= 2);
}

#[test]
fn config_errors_exit_with_code_two() {
    let root = tempfile::tempdir().unwrap();
    let out = train(root.path(), "bad", &["--rho", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = root.path().join("bad.toml");
    std::fs::write(&cfg, "env = \"bandit\"\ntotal_steps = 10\neval_every = 0\nseeds = [0]\n").unwrap();
    let out = hpr(root.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = train(root.path(), "bad", &["--env", "no-such-env"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn divergence_exits_with_code_three() {
    let root = tempfile::tempdir().unwrap();
    let out = train(root.path(), "boom", &["--lr-actor", "1e300", "--lr-critic", "1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    let log = std::fs::read_to_string(root.path().join("boom/seed-0/run.json")).unwrap();
    assert!(log.contains("\"diverged\": \"") && log.contains("step"));
}

#[test]
fn bridge_check_against_stub_server() {
    let root = tempfile::tempdir().unwrap();
    let out = hpr(root.path(), &["bridge-check", "--env", "stub", "--expect", "3,2,2", "--", HPR, "serve", "stub"]);
    assert!(out.status.success(), "{}\n{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("obs_dim 3 act_dim 2 m 2"));
    assert!(!text.contains("FAIL"));

    let wrong = hpr(root.path(), &["bridge-check", "--expect", "8,2,2", "--", HPR, "serve", "stub"]);
    assert_eq!(wrong.status.code(), Some(1));
    assert!(stdout(&wrong).contains("FAIL"));
}

#[test]
fn trains_over_a_bridged_environment() {
    let root = tempfile::tempdir().unwrap();
    let command = format!("{HPR} serve point-mass");
    let out = train(root.path(), "bridged", &["--env", "point-mass", "--bridge-command", &command]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(root.path().join("bridged/seed-1/run.json")).unwrap();
    // Bridged environments use the wide default reference point.
    assert!(log.contains("\"env_steps\": 120"));
    assert!(log.contains("-100.0"));
}
