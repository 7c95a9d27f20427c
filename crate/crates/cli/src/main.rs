//! `hpr`: train, sweep, compare and export Pareto fronts for hindsight
//! preference replay experiments, and check environment servers.

use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hpr_core::envs::{bridge_check, make_env, serve, ProtocolClient};
use hpr_core::harness::{
    compare_runs, export_front, load_run_logs, run_training, sweep_grid, write_run_log, Algorithm, RunConfig, RunLog,
};
use hpr_core::relabel::AcceptanceFilter;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "hpr", version, about = "Hindsight preference replay experiments")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = "HPR_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of one configuration.
    Train(TrainArgs),
    /// Train over the K × κ × ρ grid.
    Sweep(TrainArgs),
    /// Print a final-performance table for two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        label_a: Option<String>,
        #[arg(long)]
        label_b: Option<String>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the union front of each run directory as CSV.
    Front {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output file; only valid with a single run directory. Defaults to
        /// `<run>/front.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an environment server against the wire protocol.
    BridgeCheck {
        /// Environment id reported in the check.
        #[arg(long, default_value = "bridged")]
        env: String,
        /// Connect over TCP instead of launching a command.
        #[arg(long, conflicts_with = "command")]
        tcp: Option<String>,
        /// Expected `obs_dim,act_dim,m`.
        #[arg(long, value_parser = parse_dims)]
        expect: Option<(usize, usize, usize)>,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Server command, after `--`.
        #[arg(last = true)]
        command: Vec<String>,
    },
    /// Serve a built-in environment over the wire protocol on stdio.
    Serve { env: String },
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    hv_reference: Option<Vec<f64>>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `none`, `cosine:<tau>` or `utility:<epsilon>`.
    #[arg(long, value_parser = parse_filter)]
    filter: Option<AcceptanceFilter>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    auto_alpha: Option<bool>,
    #[arg(long)]
    lr_actor: Option<f64>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long)]
    polyak: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Server command for a bridged environment, whitespace separated.
    #[arg(long)]
    bridge_command: Option<String>,
    #[arg(long)]
    bridge_tcp: Option<String>,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [o, a, m] => Ok((o, a, m)),
        _ => Err(format!("expected obs_dim,act_dim,m, got `{s}`")),
    }
}

fn parse_filter(s: &str) -> Result<AcceptanceFilter, String> {
    let (kind, value) = s.split_once(':').unwrap_or((s, ""));
    let num = || value.parse::<f64>().map_err(|e| format!("bad filter value in `{s}`: {e}"));
    match kind {
        "none" => Ok(AcceptanceFilter::None),
        "cosine" => Ok(AcceptanceFilter::Cosine { tau: num()? }),
        "utility" => Ok(AcceptanceFilter::Utility { epsilon: num()? }),
        _ => Err(format!("unknown filter `{s}`")),
    }
}

/// Config-level failure: bad file, bad flag value or failed validation.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn build_config(args: &TrainArgs, root: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| ConfigError(e.to_string()))?,
        None => RunConfig::bandit(20_000, 1_000, vec![0, 1, 2, 3, 4]),
    };
    macro_rules! set {
        ($($field:ident).+ <- $value:expr) => {
            if let Some(v) = $value.clone() {
                cfg.$($field).+ = v;
            }
        };
    }
    set!(env <- args.env);
    set!(algorithm <- args.algorithm);
    set!(total_steps <- args.total_steps);
    set!(eval_every <- args.eval_every);
    set!(seeds <- args.seeds);
    set!(grid_size <- args.grid_size);
    set!(buffer_capacity <- args.buffer_capacity);
    set!(rho <- args.rho);
    set!(relabel.k <- args.k);
    set!(relabel.kappa <- args.kappa);
    set!(relabel.lambda <- args.lambda);
    set!(relabel.filter <- args.filter);
    set!(agent.gamma <- args.gamma);
    set!(agent.alpha <- args.alpha);
    set!(agent.auto_alpha <- args.auto_alpha);
    set!(agent.lr_actor <- args.lr_actor);
    set!(agent.lr_critic <- args.lr_critic);
    set!(agent.polyak <- args.polyak);
    set!(agent.batch_size <- args.batch_size);
    set!(agent.warmup_steps <- args.warmup_steps);
    set!(agent.hidden <- args.hidden);
    set!(output_dir <- args.output_dir);
    if let Some(r) = &args.hv_reference {
        cfg.hv_reference = Some(r.clone());
    }
    if let Some(cmd) = &args.bridge_command {
        cfg.bridge_command = Some(cmd.split_whitespace().map(str::to_owned).collect());
    }
    if let Some(addr) = &args.bridge_tcp {
        cfg.bridge_tcp = Some(addr.clone());
    }
    if let (Some(root), true) = (root, cfg.output_dir.is_relative()) {
        cfg.output_dir = root.join(&cfg.output_dir);
    }
    cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(cfg)
}

/// Trains, writes logs and returns whether any seed diverged.
fn train_and_write(cfg: &RunConfig) -> Result<(Vec<RunLog>, bool)> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml_string()?)?;
    let logs = run_training(cfg)?;
    let mut diverged = false;
    for log in &logs {
        write_run_log(&cfg.output_dir, log)?;
        match (&log.diverged, log.final_row()) {
            (Some(msg), _) => {
                diverged = true;
                eprintln!("seed {}: diverged ({msg})", log.seed);
            }
            (None, Some(row)) => println!(
                "seed {}: steps {} eum {:.4} hv {:.4} sparsity {:.4} front {}",
                log.seed, log.env_steps, row.eum, row.hv, row.sparsity, row.front_size
            ),
            (None, None) => println!("seed {}: no evaluations", log.seed),
        }
    }
    Ok((logs, diverged))
}

fn run(cli: Cli) -> Result<u8> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Train(args) => {
            let cfg = build_config(&args, root)?;
            let (_, diverged) = train_and_write(&cfg)?;
            println!("logs written to {}", cfg.output_dir.display());
            Ok(if diverged { EXIT_DIVERGED } else { 0 })
        }
        Command::Sweep(args) => {
            let base = build_config(&args, root)?;
            let mut any_diverged = false;
            println!("k | kappa | rho | mean final HV | mean final EUM");
            for (k, kappa, rho) in sweep_grid() {
                let cfg = base.at_sweep_point(k, kappa, rho);
                let (logs, diverged) = train_and_write(&cfg)?;
                any_diverged |= diverged;
                let finals: Vec<_> = logs.iter().filter_map(|l| l.final_row()).collect();
                let n = finals.len().max(1) as f64;
                println!(
                    "{k} | {kappa} | {rho} | {:.4} | {:.4}",
                    finals.iter().map(|r| r.hv).sum::<f64>() / n,
                    finals.iter().map(|r| r.eum).sum::<f64>() / n
                );
            }
            Ok(if any_diverged { EXIT_DIVERGED } else { 0 })
        }
        Command::Compare { a, b, label_a, label_b, out } => {
            let logs_a = load_run_logs(&a).with_context(|| format!("reading {}", a.display()))?;
            let logs_b = load_run_logs(&b).with_context(|| format!("reading {}", b.display()))?;
            let name = |label: Option<String>, logs: &[RunLog]| label.unwrap_or_else(|| logs[0].algorithm.to_string());
            let report = compare_runs(&name(label_a, &logs_a), &logs_a, &name(label_b, &logs_b), &logs_b)?;
            let table = report.render();
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(0)
        }
        Command::Front { runs, out } => {
            if out.is_some() && runs.len() > 1 {
                return Err(ConfigError("--out needs exactly one run directory".into()).into());
            }
            for dir in &runs {
                let logs = load_run_logs(dir).with_context(|| format!("reading {}", dir.display()))?;
                let path = out.clone().unwrap_or_else(|| dir.join("front.csv"));
                let front = export_front(&logs, &path)?;
                println!("{}: {} points -> {}", dir.display(), front.len(), path.display());
            }
            Ok(0)
        }
        Command::BridgeCheck { env, tcp, expect, steps, command } => {
            let client = match (&tcp, command.is_empty()) {
                (Some(addr), _) => ProtocolClient::connect_tcp(&env, addr)?,
                (None, false) => ProtocolClient::spawn(&env, &command)?,
                (None, true) => return Err(ConfigError("give a server command after `--` or --tcp".into()).into()),
            };
            let report = bridge_check(client, expect, steps)?;
            println!(
                "spec: obs_dim {} act_dim {} m {} horizon {}",
                report.spec.obs_dim, report.spec.act_dim, report.spec.m, report.spec.horizon
            );
            for (name, ok) in &report.checks {
                println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
            }
            Ok(if report.passed() { 0 } else { EXIT_FAILURE })
        }
        Command::Serve { env } => {
            let mut env = make_env(&env).map_err(|e| ConfigError(e.to_string()))?;
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve(&mut env, BufReader::new(stdin.lock()), stdout.lock())?;
            std::io::stdout().flush()?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err.downcast_ref::<ConfigError>().is_some()
                || matches!(err.downcast_ref::<hpr_core::Error>(), Some(hpr_core::Error::Config(_)));
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}
