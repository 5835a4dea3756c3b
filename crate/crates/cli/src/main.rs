mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Label-free accuracy estimation: synthetic worlds, meta-training,
/// adaptation, prediction and benchmarking.
#[derive(Debug, Parser)]
#[command(name = "metaeval", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (JSON). Stages after `gen-world` read the copy
    /// stored in the run directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for descriptor computation and per-model evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the synthetic world and write its embedding banks.
    GenWorld,
    /// Compute descriptor/accuracy pairs for every model and partition.
    MakePairs,
    /// Meta-train on the reference models.
    MetaTrain,
    /// Adapt contexts for unseen models.
    Adapt(ModelArg),
    /// Predict test-workload accuracy with conformal intervals.
    Predict(ModelArg),
    /// KNN and Top-k estimates on the test workloads.
    Baseline(ModelArg),
    /// Run every stage end to end and write the report.
    Benchmark,
    /// Evaluate a cost sheet against its budget.
    Cost {
        #[arg(long)]
        sheet: PathBuf,
    },
    /// Audit a run directory.
    Verify {
        /// Also regenerate the run and compare bytes.
        #[arg(long)]
        rerun: bool,
    },
}

#[derive(Debug, Args)]
pub struct ModelArg {
    /// Unseen model id; defaults to all unseen models.
    #[arg(long)]
    pub model: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    match stages::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
