use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vgmi::harness::{emit_report, run_experiment, ExperimentConfig};
use vgmi::vgmi::identify_from;
use vgmi::{Error, Result, TransitionDataset};

#[derive(Parser)]
#[command(name = "vgmi", version, about = "Value-guided model identification and policy search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set learn.vgmi.k_max=20`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect excitation transitions from the true system into a CSV file.
    Collect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify the model from a transition CSV with the configured policy as reference.
    Identify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Seeds the grid offset and the identification loop.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full learning loop for one seed.
    Learn {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run every configured method over the given seeds.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated or repeated.
        #[arg(long, required = true, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Emit the long-format comparison table for a run directory.
    Report {
        dir: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(bytes: &[u8]) -> Result<()> {
    match std::io::stdout().write_all(bytes) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let text = match &args.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => "{}".to_string(),
    };
    ExperimentConfig::from_json_with_overrides(&text, &args.overrides)
}

fn experiment(args: &ConfigArgs, seeds: Vec<u64>, out_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = load(args)?;
    cfg.seeds = seeds;
    if let Some(dir) = out_dir {
        cfg.output_dir = dir;
    }
    let out = run_experiment(&cfg)?;
    let mut text = String::new();
    for run in &out.runs {
        text.push_str(&format!("{}\n", run.path.display()));
    }
    text.push_str(&format!("{}\n", out.summary_path.display()));
    emit(text.as_bytes())
}

fn identify(args: &ConfigArgs, data: &Path, seed: u64) -> Result<()> {
    let mut cfg = load(args)?;
    cfg.learn.vgmi.seed = seed;
    let dataset = TransitionDataset::read_csv(&cfg.task.spec, std::fs::File::open(data)?)?;
    let grid = cfg.grid.build(&cfg.task.spec, &cfg.truth, seed)?;
    let policy = cfg.learn.initial_policy(&cfg.task)?;
    let out = identify_from(&dataset, &grid, &policy, &cfg.task, &cfg.learn.vgmi, None)?;
    let summary = json!({
        "map_index": out.map_index,
        "map_theta": out.map_theta,
        "models_evaluated": out.log.len(),
        "objective_evaluations": out.objective_evaluations,
        "stop_reason": out.stop_reason,
        "entropy": out.belief.entropy(),
        "map_probability": out.belief.probabilities()[out.map_index],
        "grid": grid.spec(),
        "log": out.log.entries,
    });
    emit(format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { config, seed, out } => {
            let cfg = load(&config)?;
            let data = cfg.data.collect(&cfg.task, &cfg.truth, seed)?;
            data.write_csv(&cfg.task.spec, std::fs::File::create(&out)?)?;
            emit(format!("{} transitions -> {}\n", data.len(), out.display()).as_bytes())
        }
        Command::Identify { config, data, seed } => identify(&config, &data, seed),
        Command::Learn { config, seed, out_dir } => experiment(&config, vec![seed], out_dir),
        Command::Benchmark { config, seed, out_dir } => experiment(&config, seed, out_dir),
        Command::Report { dir, out } => {
            let report = emit_report(&dir)?;
            for (path, reason) in &report.problems {
                eprintln!("warning: {}: {reason}", path.display());
            }
            let bytes = report.to_csv()?;
            match out {
                Some(path) => std::fs::write(path, bytes)?,
                None => emit(&bytes)?,
            }
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "input" => 4,
        "numeric" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
