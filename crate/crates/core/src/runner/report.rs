use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RunError, Task};
use crate::baseline::RolloutStep;
use crate::evalmetrics::{ClassificationReport, DurationReport};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHashes {
    pub config: String,
    pub template: String,
    pub persona: Option<String>,
    pub spatial: Option<String>,
    pub priors: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCounts {
    pub eval_intervals: usize,
    /// Evaluation intervals with fewer than three earlier activities.
    pub lacking_history: usize,
    pub instances: usize,
    /// Instances whose history window reaches back into the training split.
    pub history_from_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSuccess {
    pub tolerance_minutes: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub shots: usize,
    /// Instances with a parsed prediction; the duration metrics cover these.
    pub scored: usize,
    /// Instances whose replies never parsed. They count as misclassified.
    pub parse_failures: usize,
    pub regenerations: usize,
    /// Instances lost to backend errors, absent from every metric.
    pub backend_failures: usize,
    pub classification: Option<ClassificationReport>,
    pub duration: Option<DurationReport>,
    pub joint_success: Vec<JointSuccess>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub shots: usize,
    pub target_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextActivityReport {
    pub coverage: CoverageCounts,
    pub per_shot: Vec<ShotResult>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySpan {
    pub day_id: String,
    #[serde(with = "crate::serde_ts")]
    pub span_start: NaiveDateTime,
    #[serde(with = "crate::serde_ts")]
    pub span_end: NaiveDateTime,
    pub t_day: usize,
    pub gap_minutes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDay {
    pub day_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayDtw {
    pub day_id: String,
    /// Baseline RNG seed; `None` for backend rollouts.
    pub seed: Option<u64>,
    pub t_day: usize,
    pub raw: u64,
    pub normalized: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutShotResult {
    pub shots: usize,
    pub median_normalized: Option<f64>,
    pub median_raw: Option<f64>,
    pub days: Vec<DayDtw>,
    /// Predicted steps per scored day, in the order of `days`.
    pub traces: Vec<Vec<RolloutStep>>,
    pub failed_days: Vec<SkippedDay>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineArm {
    pub seeds: usize,
    /// Median over every (day, seed) pair.
    pub median_normalized: Option<f64>,
    pub median_raw: Option<f64>,
    pub per_seed_median_normalized: Vec<f64>,
    pub per_day: Vec<DayDtw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub days: Vec<DaySpan>,
    pub skipped_days: Vec<SkippedDay>,
    pub per_shot: Vec<RolloutShotResult>,
    pub baseline: BaselineArm,
}

/// Deterministic results of one run. Timing and call counters live in
/// [`RunStats`] so that repeated runs produce identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub task: Task,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub hashes: InputHashes,
    pub ontology: Vec<String>,
    pub backend_id: String,
    pub embedder_id: String,
    /// True when some instances or days were lost to backend errors.
    pub partial: bool,
    pub next_activity: Option<NextActivityReport>,
    pub rollout: Option<RolloutReport>,
}

impl RunReport {
    pub fn is_partial(&self) -> bool {
        let next = self
            .next_activity
            .as_ref()
            .is_some_and(|n| !n.failures.is_empty());
        let roll = self
            .rollout
            .as_ref()
            .is_some_and(|r| r.per_shot.iter().any(|s| !s.failed_days.is_empty()));
        next || roll
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub config_hash: String,
    pub wall_clock_ms: u64,
    pub network_calls: usize,
    pub retrieval_queries: usize,
    pub cache_hits: Option<usize>,
    pub cache_misses: Option<usize>,
    pub transient_retries: Option<usize>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| RunError::Other(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| RunError::Other(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn next_tables(report: &RunReport, next: &NextActivityReport, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let hash = &report.hashes.config;
    let seed = report.seed.to_string();
    let tolerances: Vec<String> = report
        .config
        .tolerances
        .iter()
        .map(|t| format!("joint_success_{t}min"))
        .collect();
    let mut header: Vec<&str> = vec![
        "config_hash", "seed", "shots", "instances", "scored", "parse_failures", "backend_failures",
        "accuracy", "micro_f1", "macro_precision", "macro_recall", "macro_f1", "weighted_precision",
        "weighted_recall", "weighted_f1", "mae_minutes", "rmse_minutes",
    ];
    header.extend(tolerances.iter().map(String::as_str));

    let mut wide = Vec::new();
    let mut long = Vec::new();
    for s in &next.per_shot {
        let c = s.classification.as_ref();
        let mut metrics: Vec<(String, Option<f64>)> = vec![
            ("accuracy".into(), c.map(|c| c.accuracy)),
            ("micro_f1".into(), c.map(|c| c.micro.f1)),
            ("macro_precision".into(), c.map(|c| c.macro_avg.precision)),
            ("macro_recall".into(), c.map(|c| c.macro_avg.recall)),
            ("macro_f1".into(), c.map(|c| c.macro_avg.f1)),
            ("weighted_precision".into(), c.map(|c| c.weighted.precision)),
            ("weighted_recall".into(), c.map(|c| c.weighted.recall)),
            ("weighted_f1".into(), c.map(|c| c.weighted.f1)),
            ("mae_minutes".into(), s.duration.as_ref().map(|d| d.mae)),
            ("rmse_minutes".into(), s.duration.as_ref().map(|d| d.rmse)),
        ];
        for (name, j) in tolerances.iter().zip(&s.joint_success) {
            metrics.push((name.clone(), j.value));
        }
        let mut row = vec![
            hash.clone(),
            seed.clone(),
            s.shots.to_string(),
            (s.scored + s.parse_failures).to_string(),
            s.scored.to_string(),
            s.parse_failures.to_string(),
            s.backend_failures.to_string(),
        ];
        row.extend(metrics.iter().map(|(_, v)| fmt_opt(*v)));
        wide.push(row);
        for (name, v) in metrics {
            long.push(vec![hash.clone(), seed.clone(), s.shots.to_string(), name, fmt_opt(v)]);
        }
    }
    let a = dir.join("next_activity_summary.csv");
    let b = dir.join("next_activity_metrics.csv");
    write_csv(&a, &header, &wide)?;
    write_csv(&b, &["config_hash", "seed", "shots", "metric", "value"], &long)?;
    Ok(vec![a, b])
}

fn rollout_tables(report: &RunReport, roll: &RolloutReport, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let hash = &report.hashes.config;
    let seed = report.seed.to_string();
    let mut summary = Vec::new();
    let mut per_day = Vec::new();
    let day_row = |arm: &str, shots: String, d: &DayDtw| {
        vec![
            hash.clone(),
            seed.clone(),
            arm.to_string(),
            shots,
            d.seed.map(|s| s.to_string()).unwrap_or_default(),
            d.day_id.clone(),
            d.t_day.to_string(),
            d.steps.to_string(),
            d.raw.to_string(),
            d.normalized.to_string(),
        ]
    };
    for s in &roll.per_shot {
        summary.push(vec![
            hash.clone(),
            seed.clone(),
            "llm".into(),
            s.shots.to_string(),
            s.days.len().to_string(),
            s.failed_days.len().to_string(),
            fmt_opt(s.median_normalized),
            fmt_opt(s.median_raw),
        ]);
        per_day.extend(s.days.iter().map(|d| day_row("llm", s.shots.to_string(), d)));
    }
    let b = &roll.baseline;
    summary.push(vec![
        hash.clone(),
        seed.clone(),
        "markov_baseline".into(),
        String::new(),
        b.per_day.len().to_string(),
        "0".into(),
        fmt_opt(b.median_normalized),
        fmt_opt(b.median_raw),
    ]);
    per_day.extend(b.per_day.iter().map(|d| day_row("markov_baseline", String::new(), d)));

    let a = dir.join("rollout_summary.csv");
    let c = dir.join("dtw_per_day.csv");
    write_csv(
        &a,
        &["config_hash", "seed", "arm", "shots", "days_scored", "days_failed", "median_dtw_normalized", "median_dtw_raw"],
        &summary,
    )?;
    write_csv(
        &c,
        &["config_hash", "seed", "arm", "shots", "rollout_seed", "day", "t_day", "steps", "dtw_raw", "dtw_normalized"],
        &per_day,
    )?;
    Ok(vec![a, c])
}

/// Writes `report.json`, `run_stats.json` and the CSV tables into `dir`.
/// Returns the paths written.
pub fn emit_report(report: &RunReport, stats: &RunStats, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).map_err(|e| RunError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(&json, text)?;
    written.push(json);
    let st = dir.join("run_stats.json");
    let mut text = serde_json::to_string_pretty(stats).map_err(|e| RunError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(&st, text)?;
    written.push(st);
    if let Some(n) = &report.next_activity {
        written.extend(next_tables(report, n, dir)?);
    }
    if let Some(r) = &report.rollout {
        written.extend(rollout_tables(report, r, dir)?);
    }
    Ok(written)
}
