use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunLog;
use crate::error::{Error, Result};
use crate::metrics::{nondominated, ParetoArchive};
use crate::pref::ReturnVector;
use crate::stats::{welch, WelchResult};

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Writes `<root>/seed-<s>/eval.jsonl` (one evaluation row per line) and
/// `<root>/seed-<s>/run.json` (the complete log).
pub fn write_run_log(root: &Path, log: &RunLog) -> Result<PathBuf> {
    let dir = seed_dir(root, log.seed);
    fs::create_dir_all(&dir)?;
    let mut rows = BufWriter::new(fs::File::create(dir.join("eval.jsonl"))?);
    for row in &log.rows {
        serde_json::to_writer(&mut rows, row)?;
        rows.write_all(b"\n")?;
    }
    rows.flush()?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(log)?)?;
    Ok(dir)
}

/// Reads every `seed-*/run.json` below `root`, ordered by seed.
pub fn load_run_logs(root: &Path) -> Result<Vec<RunLog>> {
    let mut logs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path().join("run.json");
        let is_seed_dir = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("seed-"));
        if is_seed_dir && path.is_file() {
            let log: RunLog = serde_json::from_str(&fs::read_to_string(&path)?)?;
            logs.push(log);
        }
    }
    if logs.is_empty() {
        return Err(Error::Empty("run logs"));
    }
    logs.sort_by_key(|l| l.seed);
    Ok(logs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

/// Final-evaluation statistics of one method across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub label: String,
    pub seeds: usize,
    pub eum: MeanStd,
    pub sparsity: MeanStd,
    /// Raw hypervolume (not scaled).
    pub hv: MeanStd,
    pub final_hv: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub env: String,
    pub a: SideSummary,
    pub b: SideSummary,
    /// Welch test of final HV, `a` against `b`. `None` when both sides have
    /// zero spread and different means.
    pub hv_test: Option<WelchResult>,
}

fn summarize(label: &str, logs: &[RunLog]) -> Result<SideSummary> {
    if logs.len() < 2 {
        return Err(Error::Stats(format!("`{label}` needs at least two seeds, got {}", logs.len())));
    }
    let mut eum = Vec::new();
    let mut sparsity = Vec::new();
    let mut hv = Vec::new();
    for log in logs {
        let row = log
            .final_row()
            .ok_or_else(|| Error::Empty("evaluation rows"))?;
        eum.push(row.eum);
        sparsity.push(row.sparsity);
        hv.push(row.hv);
    }
    Ok(SideSummary {
        label: label.to_owned(),
        seeds: logs.len(),
        eum: MeanStd::of(&eum),
        sparsity: MeanStd::of(&sparsity),
        hv: MeanStd::of(&hv),
        final_hv: hv,
    })
}

fn shared_env(logs: &[RunLog]) -> Result<(&str, &[f64])> {
    let first = logs.first().ok_or(Error::Empty("run logs"))?;
    for log in logs {
        if log.env != first.env {
            return Err(Error::Config(format!("mismatched environments `{}` and `{}`", first.env, log.env)));
        }
        if log.hv_reference != first.hv_reference {
            return Err(Error::Config(format!(
                "mismatched hypervolume references {:?} and {:?}",
                first.hv_reference, log.hv_reference
            )));
        }
    }
    Ok((&first.env, &first.hv_reference))
}

/// Compares the final evaluations of two sets of runs on the same
/// environment.
pub fn compare_runs(label_a: &str, a: &[RunLog], label_b: &str, b: &[RunLog]) -> Result<Comparison> {
    let all: Vec<RunLog> = a.iter().chain(b).cloned().collect();
    let (env, _) = shared_env(&all)?;
    let sa = summarize(label_a, a)?;
    let sb = summarize(label_b, b)?;
    let hv_test = match welch(&sa.final_hv, &sb.final_hv) {
        Ok(r) => Some(r),
        Err(Error::Stats(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        env: env.to_owned(),
        a: sa,
        b: sb,
        hv_test,
    })
}

#[derive(Clone, Copy)]
enum Better {
    Higher,
    Lower,
}

fn winner(a: f64, b: f64, better: Better) -> (bool, bool) {
    match better {
        Better::Higher => (a > b, b > a),
        Better::Lower => (a < b, b < a),
    }
}

fn number(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn cell(ms: MeanStd, scale: f64, bold: bool) -> String {
    let text = format!("{} ± {}", number(ms.mean / scale), number(ms.std / scale));
    if bold {
        format!("**{text}**")
    } else {
        text
    }
}

impl Comparison {
    /// Pipe-delimited table: one row per method, columns
    /// `EUM ↑ | Sparsity ↓ | HV ↑ (×10⁶) | HV p-value`. The better mean of
    /// each metric is wrapped in `**`; ties are left plain.
    pub fn render(&self) -> String {
        let (ea, eb) = winner(self.a.eum.mean, self.b.eum.mean, Better::Higher);
        let (sa, sb) = winner(self.a.sparsity.mean, self.b.sparsity.mean, Better::Lower);
        let (ha, hb) = winner(self.a.hv.mean, self.b.hv.mean, Better::Higher);
        let p = match &self.hv_test {
            Some(r) => format!("{:.4}{}", r.p, r.marker()),
            None => "n/a".to_owned(),
        };
        let mut out = String::new();
        writeln!(out, "env | method | seeds | EUM ↑ | Sparsity ↓ | HV ↑ (×10⁶) | HV p-value").unwrap();
        for (side, e, s, h, pcol) in [(&self.a, ea, sa, ha, p.as_str()), (&self.b, eb, sb, hb, "")] {
            writeln!(
                out,
                "{} | {} | {} | {} | {} | {} | {}",
                self.env,
                side.label,
                side.seeds,
                cell(side.eum, 1.0, e),
                cell(side.sparsity, 1.0, s),
                cell(side.hv, 1e6, h),
                pcol
            )
            .unwrap();
        }
        out
    }
}

/// Writes the nondominated union of the runs' final archives as
/// comma-separated text: a header `g1,g2,…` then one point per line.
pub fn export_front(logs: &[RunLog], path: &Path) -> Result<ParetoArchive> {
    shared_env(logs)?;
    let front = ParetoArchive::union(logs.iter().map(|l| &l.final_archive));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    let m = front.points().first().map_or(logs[0].hv_reference.len(), |p| p.dim());
    let header: Vec<String> = (1..=m).map(|j| format!("g{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for p in front.points() {
        let cols: Vec<String> = p.values().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cols.join(","))?;
    }
    out.flush()?;
    Ok(front)
}

/// Reads a file written by [`export_front`].
pub fn read_front(path: &Path) -> Result<ParetoArchive> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        points.push(ReturnVector::new(values)?);
    }
    Ok(nondominated(&points))
}
