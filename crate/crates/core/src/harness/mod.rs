//! Experiment configuration, orchestration over methods and seeds, CSV run
//! records and the consolidated report.

mod config;
mod experiment;
mod records;
mod report;

pub use config::{BudgetSweep, DataConfig, ExperimentConfig, GridChoice};
pub use experiment::{mean_std, run_experiment, run_finals, ExperimentOutcome, RunResult, SummaryRow, CONFIG_FILE, SUMMARY_FILE};
pub use records::{read_records, read_timing, record_path, timing_path, write_records, RecordRow, TimingRow, RECORD_HEADER};
pub use report::{emit_report, value_prediction_error, Report, ReportRow, REPORT_METRICS};
