use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::CONFIG_FILE;
use super::records::{csv_bytes, read_records, read_timing, split, RecordRow};
use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::policy::{policy_value, Policy, Task};

/// Metrics emitted per record row, in table order.
pub const REPORT_METRICS: &[&str] = &[
    "real_reward",
    "sim_reward",
    "cost",
    "identification_error",
    "param_error",
    "entropy",
    "stop_k",
    "weighted_deviation",
    "epsilon",
    "value_prediction_error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    /// Cumulative wall-clock from the timing sidecar, when present.
    pub elapsed_s: Option<f64>,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Files that could not be used, with the reason.
    pub problems: Vec<(PathBuf, String)>,
}

impl Report {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&self.rows, &["method", "seed", "iteration", "elapsed_s", "metric", "value"])
    }
}

/// `|V^π(θ̂) - V^π(θ_true)|` for the mean policy `π`.
pub fn value_prediction_error(task: &Task, policy: &Policy, theta_hat: &ModelParams, truth: &ModelParams) -> Result<f64> {
    let predicted = policy_value(policy, theta_hat, task)?.value;
    let actual = policy_value(policy, truth, task)?.value;
    Ok((predicted - actual).abs())
}

fn diagnostic(row: &RecordRow, cfg: &ExperimentConfig) -> std::result::Result<f64, String> {
    let theta = row.theta()?;
    let policy = Policy::new(&cfg.task.spec, split(&row.weights)?, split(&row.exploration)?).map_err(|e| e.to_string())?;
    value_prediction_error(&cfg.task, &policy, &theta, &cfg.truth).map_err(|e| e.to_string())
}

fn is_record_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    let Some(stem) = name.strip_suffix(".csv") else {
        return false;
    };
    stem.rsplit_once("_seed")
        .is_some_and(|(_, seed)| !seed.is_empty() && seed.bytes().all(|b| b.is_ascii_digit()))
}

/// Long-format table over every record file in `dir`.
///
/// The value-prediction diagnostic replays the recorded policy under the
/// recorded model and the ground truth from the run's config copy. Files
/// that fail to parse are listed in [`Report::problems`] and skipped.
pub fn emit_report(dir: &Path) -> Result<Report> {
    let mut report = Report::default();
    let cfg = match ExperimentConfig::load(&dir.join(CONFIG_FILE)) {
        Ok(c) => Some(c),
        Err(e) => {
            report.problems.push((dir.join(CONFIG_FILE), format!("{e}; diagnostic left empty")));
            None
        }
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_record_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::MalformedRecord {
            path: dir.display().to_string(),
            reason: "no record files".into(),
        });
    }

    for path in files {
        let rows = match read_records(&path) {
            Ok(rows) => rows,
            Err(e) => {
                report.problems.push((path, e.to_string()));
                continue;
            }
        };
        let timing_file = path.with_extension("timing.csv");
        let elapsed: BTreeMap<usize, f64> = if timing_file.exists() {
            match read_timing(&timing_file) {
                Ok(t) => t.into_iter().map(|t| (t.iteration, t.elapsed_s)).collect(),
                Err(e) => {
                    report.problems.push((timing_file, e.to_string()));
                    BTreeMap::new()
                }
            }
        } else {
            BTreeMap::new()
        };
        let mut flagged = false;
        for row in &rows {
            let diag = match &cfg {
                Some(cfg) => match diagnostic(row, cfg) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        if !flagged {
                            report.problems.push((path.clone(), format!("diagnostic: {e}")));
                            flagged = true;
                        }
                        None
                    }
                },
                None => None,
            };
            let values = [
                Some(row.real_reward),
                Some(row.sim_reward),
                Some(row.cost as f64),
                Some(row.identification_error),
                Some(row.param_error),
                row.entropy,
                Some(row.stop_k as f64),
                row.weighted_deviation,
                row.epsilon,
                diag,
            ];
            for (metric, value) in REPORT_METRICS.iter().zip(values) {
                report.rows.push(ReportRow {
                    method: row.method.clone(),
                    seed: row.seed,
                    iteration: row.iteration,
                    elapsed_s: elapsed.get(&row.iteration).copied(),
                    metric: metric.to_string(),
                    value,
                });
            }
        }
    }
    Ok(report)
}
