use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::ModelParams;
use crate::error::{Error, Result};
use crate::learn::OuterRecord;

/// One CSV row of a run record. Vectors are `;`-joined, absent values empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub cost: u64,
    pub identification_cost: u64,
    pub policy_cost: u64,
    pub transitions: usize,
    pub real_reward: f64,
    pub sim_reward: f64,
    pub execution_reward: f64,
    pub kl: f64,
    pub stop_k: usize,
    pub objective_evaluations: usize,
    pub identification_error: f64,
    pub param_error: f64,
    pub entropy: Option<f64>,
    pub weighted_deviation: Option<f64>,
    pub epsilon: Option<f64>,
    pub value_consensus: bool,
    pub theta: String,
    pub weights: String,
    pub exploration: String,
}

/// Wall-clock per phase, kept apart from the deterministic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub iteration: usize,
    pub identification_s: f64,
    pub policy_s: f64,
    pub elapsed_s: f64,
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub(crate) fn split(text: &str) -> std::result::Result<Vec<f64>, String> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(';')
        .map(|v| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
        .collect()
}

impl RecordRow {
    pub fn from_record(method: &str, seed: u64, r: &OuterRecord) -> Self {
        Self {
            method: method.to_string(),
            seed,
            iteration: r.iteration,
            cost: r.cost,
            identification_cost: r.identification_cost,
            policy_cost: r.policy_cost,
            transitions: r.transitions,
            real_reward: r.real_reward,
            sim_reward: r.sim_reward,
            execution_reward: r.execution_reward,
            kl: r.kl,
            stop_k: r.stop_k,
            objective_evaluations: r.objective_evaluations,
            identification_error: r.identification_error,
            param_error: r.param_error,
            entropy: r.entropy,
            weighted_deviation: r.weighted_deviation,
            epsilon: r.epsilon,
            value_consensus: r.value_consensus,
            theta: join(&r.theta),
            weights: join(&r.weights),
            exploration: join(&r.exploration),
        }
    }

    pub fn theta(&self) -> std::result::Result<ModelParams, String> {
        split(&self.theta).map(ModelParams)
    }
}

/// `<method>_seed<seed>.csv` inside `dir`.
pub fn record_path(dir: &Path, method: &str, seed: u64) -> PathBuf {
    dir.join(format!("{method}_seed{seed}.csv"))
}

pub fn timing_path(dir: &Path, method: &str, seed: u64) -> PathBuf {
    dir.join(format!("{method}_seed{seed}.timing.csv"))
}

/// Serializes rows to CSV bytes with a header, even when empty.
pub(crate) fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes through a temporary sibling file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_records(dir: &Path, method: &str, seed: u64, records: &[OuterRecord]) -> Result<PathBuf> {
    let rows: Vec<RecordRow> = records.iter().map(|r| RecordRow::from_record(method, seed, r)).collect();
    let path = record_path(dir, method, seed);
    write_atomic(&path, &csv_bytes(&rows, RECORD_HEADER)?)?;

    let mut elapsed = 0.0;
    let timing: Vec<TimingRow> = records
        .iter()
        .map(|r| {
            elapsed += r.identification_s + r.policy_s;
            TimingRow {
                iteration: r.iteration,
                identification_s: r.identification_s,
                policy_s: r.policy_s,
                elapsed_s: elapsed,
            }
        })
        .collect();
    write_atomic(
        &timing_path(dir, method, seed),
        &csv_bytes(&timing, &["iteration", "identification_s", "policy_s", "elapsed_s"])?,
    )?;
    Ok(path)
}

pub const RECORD_HEADER: &[&str] = &[
    "method",
    "seed",
    "iteration",
    "cost",
    "identification_cost",
    "policy_cost",
    "transitions",
    "real_reward",
    "sim_reward",
    "execution_reward",
    "kl",
    "stop_k",
    "objective_evaluations",
    "identification_error",
    "param_error",
    "entropy",
    "weighted_deviation",
    "epsilon",
    "value_consensus",
    "theta",
    "weights",
    "exploration",
];

/// Reads a record file, checking that rows are complete and that iterations
/// and cumulative cost never go backwards.
pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.display().to_string(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(malformed("unexpected header".into()));
    }
    let mut rows: Vec<RecordRow> = Vec::new();
    for (line, row) in reader.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| malformed(format!("row {}: {e}", line + 1)))?;
        for (name, text) in [("theta", &row.theta), ("weights", &row.weights), ("exploration", &row.exploration)] {
            split(text).map_err(|e| malformed(format!("row {} {name}: {e}", line + 1)))?;
        }
        if let Some(prev) = rows.last() {
            if row.iteration <= prev.iteration || row.cost < prev.cost {
                return Err(malformed(format!("row {} goes back in time", line + 1)));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_timing(path: &Path) -> Result<Vec<TimingRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize::<TimingRow>() {
        rows.push(row?);
    }
    Ok(rows)
}
