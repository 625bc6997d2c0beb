use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::records::{csv_bytes, write_atomic, write_records};
use crate::error::Result;
use crate::grid::ModelGrid;
use crate::learn::{run_main_loop, Identifier, OuterRecord};

/// Results of one (method, seed) pair.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: String,
    pub seed: u64,
    pub grid: ModelGrid,
    pub records: Vec<OuterRecord>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Per-run scalar summaries, in summary-file order.
pub fn run_finals(records: &[OuterRecord]) -> Vec<(&'static str, f64)> {
    let Some(last) = records.last() else {
        return Vec::new();
    };
    let mean_k = records.iter().map(|r| r.stop_k as f64).sum::<f64>() / records.len() as f64;
    vec![
        ("final_real_reward", last.real_reward),
        ("final_sim_reward", last.sim_reward),
        ("total_cost", last.cost as f64),
        ("iterations", records.len() as f64),
        ("mean_stop_k", mean_k),
        ("final_identification_error", last.identification_error),
        ("final_param_error", last.param_error),
    ]
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn summarize(runs: &[RunResult], methods: &[String]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for method in methods {
        let finals: Vec<Vec<(&str, f64)>> = runs
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| run_finals(&r.records))
            .filter(|f| !f.is_empty())
            .collect();
        let Some(first) = finals.first() else {
            continue;
        };
        for (i, (metric, _)) in first.iter().enumerate() {
            let values: Vec<f64> = finals.iter().map(|f| f[i].1).collect();
            let (mean, std) = mean_std(&values);
            rows.push(SummaryRow {
                method: method.clone(),
                metric: metric.to_string(),
                runs: values.len(),
                mean,
                std,
            });
        }
    }
    rows
}

fn run_method(cfg: &ExperimentConfig, method: &Identifier, runs: &mut Vec<RunResult>) -> Result<()> {
    let label = method.label();
    for &seed in &cfg.seeds {
        let grid = cfg.grid.build(&cfg.task.spec, &cfg.truth, seed)?;
        let out = run_main_loop(&cfg.task, &grid, &cfg.truth, method, &cfg.learn, seed)?;
        let path = write_records(&cfg.output_dir, &label, seed, &out.records)?;
        runs.push(RunResult {
            method: label.clone(),
            seed,
            grid,
            records: out.records,
            path,
        });
    }
    Ok(())
}

/// Runs every configured method for every seed, writing one record file per
/// (method, seed), a timing sidecar for each, a copy of the config and a
/// summary of per-run finals.
///
/// With a budget sweep, VGMI runs first and the fixed-budget methods are
/// derived from its mean number of evaluated models per identification.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_atomic(&cfg.output_dir.join(CONFIG_FILE), cfg.to_json()?.as_bytes())?;

    let mut methods = cfg.methods.clone();
    let mut runs = Vec::new();
    if let Some(sweep) = &cfg.budget_sweep {
        methods.retain(|m| m != &Identifier::Vgmi);
        run_method(cfg, &Identifier::Vgmi, &mut runs)?;
        let ks: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.records.iter().map(|x| x.stop_k as f64))
            .collect();
        if !ks.is_empty() {
            let mean_k = ks.iter().sum::<f64>() / ks.len() as f64;
            for m in &sweep.multipliers {
                let fixed = Identifier::FixedBudget {
                    models: ((m * mean_k).round() as usize).max(1),
                };
                if !methods.contains(&fixed) {
                    methods.push(fixed);
                }
            }
        }
    }
    for method in &methods {
        run_method(cfg, method, &mut runs)?;
    }

    let mut labels: Vec<String> = Vec::new();
    for r in &runs {
        if !labels.contains(&r.method) {
            labels.push(r.method.clone());
        }
    }
    let summary = summarize(&runs, &labels);
    let summary_path = cfg.output_dir.join(SUMMARY_FILE);
    write_atomic(&summary_path, &csv_bytes(&summary, &["method", "metric", "runs", "mean", "std"])?)?;
    Ok(ExperimentOutcome {
        runs,
        summary,
        summary_path,
    })
}
