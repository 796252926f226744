//! Command implementations behind the thin binary: training runs, the
//! oracle check battery, the JSON-lines advantage service, maze dataset
//! generation, and run-comparison reports.

use crate::battery::run_default_battery;
use crate::chain::build_chain;
use crate::config::{parse_config, render_config};
use crate::estimators::{plan_advantages, EstimatorKind, GroupRewards, NormMode};
use crate::maze::export_dataset;
use crate::oracle::OracleError;
use crate::trainer::{metrics_to_csv, train, TrainError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Process exit codes: 0 success, 1 validation or assertion failure, 2 I/O,
/// 3 enumeration ceiling.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_CEILING: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("{0}")]
    Chain(#[from] crate::chain::ChainError),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Maze(#[from] crate::maze::MazeError),
    #[error("{0}")]
    Oracle(#[from] OracleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} malformed input line(s)")]
    MalformedLines(usize),
    #[error("{0}")]
    Usage(String),
    #[error("oracle battery reported failures")]
    BatteryFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Maze(crate::maze::MazeError::Io { .. }) => EXIT_IO,
            CliError::Oracle(OracleError::CeilingExceeded { .. }) => EXIT_CEILING,
            CliError::Train(TrainError::Oracle(OracleError::CeilingExceeded { .. })) => EXIT_CEILING,
            _ => EXIT_FAILURE,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Run a training experiment from a config file. Writes `metrics.csv`, the
/// final `policy.txt` checkpoint, and `run_manifest.cfg` with every
/// resolved value.
pub fn cmd_train(config_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let cfg = parse_config(&read(config_path)?)?;
    let inst = build_chain(&cfg.chain)?;
    let run = train(&inst, &cfg.train)?;
    write_file(
        &out_dir.join("metrics.csv"),
        &metrics_to_csv(&run.metrics, cfg.train.k),
    )?;
    write_file(&out_dir.join("policy.txt"), &run.policy.to_text())?;
    write_file(&out_dir.join("run_manifest.cfg"), &render_config(&cfg))?;
    Ok(())
}

/// Run the oracle battery, print one line per check, and fail if anything
/// failed.
pub fn cmd_oracle_check(out: &mut dyn Write) -> Result<(), CliError> {
    let report = run_default_battery()?;
    let _ = out.write_all(report.to_text().as_bytes());
    if report.all_pass() {
        Ok(())
    } else {
        Err(CliError::BatteryFailed)
    }
}

/// One trajectory's worth of rewards in the service's ingestion format. The
/// rollout exporter's records deserialize into this shape directly; extra
/// fields are ignored and `token_count` falls back to the token list.
#[derive(Debug, Deserialize)]
pub struct ServiceRecord {
    pub group_id: String,
    pub k: usize,
    pub trajectories: Vec<ServiceTrajectory>,
}

#[derive(Debug, Deserialize)]
pub struct ServiceTrajectory {
    pub attempts: Vec<ServiceAttempt>,
}

#[derive(Debug, Deserialize)]
pub struct ServiceAttempt {
    pub reward: u8,
    #[serde(default)]
    pub token_count: Option<usize>,
    #[serde(default)]
    pub tokens: Option<Vec<u16>>,
}

impl ServiceAttempt {
    fn token_count(&self) -> Option<usize> {
        self.token_count
            .or_else(|| self.tokens.as_ref().map(|t| t.len()))
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AdvantageRecord {
    pub group_id: String,
    pub trajectories: Vec<Vec<AdvantageEntry>>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AdvantageEntry {
    pub advantage: f64,
    pub weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_advantage: Option<f64>,
}

fn validate_record(rec: &ServiceRecord) -> Result<(), String> {
    if rec.trajectories.is_empty() {
        return Err("empty group".into());
    }
    for (n, t) in rec.trajectories.iter().enumerate() {
        if t.attempts.is_empty() {
            return Err(format!("trajectory {n} has no attempts"));
        }
        if t.attempts.len() > rec.k {
            return Err(format!("trajectory {n} has more than k attempts"));
        }
        for (i, a) in t.attempts.iter().enumerate() {
            if a.reward > 1 {
                return Err(format!("trajectory {n} attempt {} reward not binary", i + 1));
            }
            if a.reward == 1 && i + 1 < t.attempts.len() {
                return Err(format!(
                    "trajectory {n} continues past its first success at attempt {}",
                    i + 1
                ));
            }
        }
        let last = t.attempts.last().unwrap();
        if last.reward == 0 && t.attempts.len() < rec.k {
            return Err(format!(
                "trajectory {n} stopped after {} failed attempts with k={}",
                t.attempts.len(),
                rec.k
            ));
        }
    }
    Ok(())
}

/// Advantages for one parsed record, through the same plan the trainer
/// uses. A single-trajectory group has no peers to center against and
/// degenerates to zero advantages.
pub fn advantages_for_record(
    rec: &ServiceRecord,
    kind: EstimatorKind,
    norm: &NormMode,
) -> AdvantageRecord {
    let rewards: Vec<Vec<f64>> = rec
        .trajectories
        .iter()
        .map(|t| t.attempts.iter().map(|a| a.reward as f64).collect())
        .collect();
    let g = GroupRewards::from_rewards(rec.k, rewards);
    let trajectories = if rec.trajectories.len() < 2 {
        rec.trajectories
            .iter()
            .map(|t| {
                t.attempts
                    .iter()
                    .map(|a| AdvantageEntry {
                        advantage: 0.0,
                        weight: 1.0,
                        token_advantage: a.token_count().map(|_| 0.0),
                    })
                    .collect()
            })
            .collect()
    } else {
        let plan = plan_advantages(&g, kind, norm).expect("group size checked");
        rec.trajectories
            .iter()
            .zip(&plan.per_trajectory)
            .map(|(t, signals)| {
                t.attempts
                    .iter()
                    .zip(signals)
                    .map(|(a, s)| AdvantageEntry {
                        advantage: s.advantage,
                        weight: s.weight,
                        token_advantage: a.token_count().map(|_| s.weight * s.advantage),
                    })
                    .collect()
            })
            .collect()
    };
    AdvantageRecord {
        group_id: rec.group_id.clone(),
        trajectories,
    }
}

/// Stream JSON-lines rollout logs to advantage records. Malformed lines are
/// reported on the error stream and skipped; strict mode fails on the first
/// one. Returns an error when any line was malformed.
pub fn cmd_advantages(
    kind: EstimatorKind,
    norm: &NormMode,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
    errors: &mut dyn Write,
    strict: bool,
) -> Result<(), CliError> {
    if kind == EstimatorKind::AlExact {
        return Err(CliError::Usage(
            "the advantage service cannot recompute al_exact (it needs continuation values)"
                .into(),
        ));
    }
    let mut malformed = 0usize;
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CliError::Io {
            path: "<stdin>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Result<ServiceRecord, String> = serde_json::from_str::<ServiceRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| validate_record(&rec).map(|()| rec));
        match parsed {
            Ok(rec) => {
                let out = advantages_for_record(&rec, kind, norm);
                let json = serde_json::to_string(&out).expect("record serializes");
                writeln!(output, "{json}").map_err(|e| CliError::Io {
                    path: "<stdout>".into(),
                    source: e,
                })?;
            }
            Err(reason) => {
                malformed += 1;
                let _ = writeln!(errors, "line {}: {reason}", idx + 1);
                if strict {
                    return Err(CliError::MalformedLines(malformed));
                }
            }
        }
    }
    if malformed > 0 {
        return Err(CliError::MalformedLines(malformed));
    }
    Ok(())
}

/// Generate maze dataset splits.
pub fn cmd_maze_gen(
    size: usize,
    train_count: usize,
    test_count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<(), CliError> {
    export_dataset(size, train_count, test_count, seed, out_dir)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub final_ver: f64,
    pub best_ver: f64,
    pub final_avg_attempts: f64,
    pub final_attempt_success: Vec<f64>,
}

fn parse_metrics_csv(name: &str, text: &str) -> Result<RunSummary, CliError> {
    let bad = |reason: &str| CliError::Usage(format!("{name}: {reason}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty csv"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let ver_idx = cols
        .iter()
        .position(|c| *c == "ver_at_k")
        .ok_or_else(|| bad("header missing ver_at_k"))?;
    let avg_idx = cols
        .iter()
        .position(|c| *c == "avg_attempts")
        .ok_or_else(|| bad("header missing avg_attempts"))?;
    let succ_idx: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("attempt_success_"))
        .map(|(i, _)| i)
        .collect();
    let mut best = f64::NEG_INFINITY;
    let mut last: Option<Vec<f64>> = None;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if vals.len() != cols.len() {
            return Err(bad("row width does not match header"));
        }
        if vals[ver_idx].is_finite() {
            best = best.max(vals[ver_idx]);
        }
        last = Some(vals);
    }
    let last = last.ok_or_else(|| bad("no data rows"))?;
    Ok(RunSummary {
        name: name.to_string(),
        final_ver: last[ver_idx],
        best_ver: best,
        final_avg_attempts: last[avg_idx],
        final_attempt_success: succ_idx.iter().map(|&i| last[i]).collect(),
    })
}

/// Tabulate final/best Ver@K and attempt statistics across runs, ranked by
/// final Ver@K. Returns the plain-text table; optionally also renders CSV.
pub fn cmd_report(csv_paths: &[&Path], csv_out: Option<&Path>) -> Result<String, CliError> {
    if csv_paths.is_empty() {
        return Err(CliError::Usage("report needs at least one metrics csv".into()));
    }
    let mut summaries = Vec::new();
    for path in csv_paths {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| path.display().to_string());
        summaries.push(parse_metrics_csv(&name, &read(path)?)?);
    }
    let mut ranked: Vec<usize> = (0..summaries.len()).collect();
    ranked.sort_by(|&a, &b| {
        summaries[b]
            .final_ver
            .partial_cmp(&summaries[a].final_ver)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut text = format!(
        "{:<24} {:>6} {:>10} {:>10} {:>14} attempt_success\n",
        "run", "rank", "final_ver", "best_ver", "avg_attempts"
    );
    let mut csv = String::from("run,rank,final_ver,best_ver,final_avg_attempts\n");
    for (rank, &i) in ranked.iter().enumerate() {
        let s = &summaries[i];
        let succ = s
            .final_attempt_success
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
            .join(" ");
        text.push_str(&format!(
            "{:<24} {:>6} {:>10.4} {:>10.4} {:>14.3} {}\n",
            s.name,
            rank + 1,
            s.final_ver,
            s.best_ver,
            s.final_avg_attempts,
            succ
        ));
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.name,
            rank + 1,
            s.final_ver,
            s.best_ver,
            s.final_avg_attempts
        ));
    }
    if let Some(path) = csv_out {
        write_file(path, &csv)?;
    }
    Ok(text)
}
