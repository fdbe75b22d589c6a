mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qoe_core::pipeline::{AllocationPolicy, FlowOption};

use config::AppConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 1.
    Usage(String),
    /// Unreadable, malformed or invalid input data; exit code 2.
    Data(String),
}

impl CliError {
    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

/// What a successful command produced.
pub enum Outcome {
    Ok,
    /// Some fitted model stopped at its iteration cap; exit code 3.
    Unconverged(Vec<String>),
}

#[derive(Debug, Parser)]
#[command(name = "qoe", version, about = "QoE prediction for HTTP adaptive streaming sessions")]
struct Cli {
    /// Seed for splits, folds, model randomness and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Configuration file (.toml or .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a JSON-lines session log.
    Ingest {
        input: PathBuf,
    },
    /// Import per-session CSV rows with a column mapping.
    ImportCsv {
        input: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        /// Top of the rating scale the scores are normalized by.
        #[arg(long, default_value_t = 5.0)]
        scale_max: f64,
    },
    /// Write the f1..f10 feature matrix as CSV.
    ExtractFeatures {
        /// Session log; the synthetic generator is used when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit one model and its scaler.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        /// SVR, RF, DT, GB, KNN, MLP or SGD.
        #[arg(long)]
        model: String,
        /// Hyperparameter override `key=value`, repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        /// Fit on every row instead of the training split.
        #[arg(long)]
        all_rows: bool,
    },
    /// Predict QoE for every session of a log.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
    },
    /// Score a saved model on the test split (or every row).
    Evaluate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
        #[arg(long)]
        all_rows: bool,
    },
    /// Exhaustive hyperparameter search by cross-validated R².
    GridSearch {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        model: String,
        /// Grid file mapping each hyperparameter to a list of values.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Test MSE against training fraction for every model.
    LearningCurve {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Prediction wall time against test size for every model.
    BenchTime {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Summary table of every model on the test split.
    Compare {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Generate a labeled synthetic session log.
    Simulate {
        #[arg(long)]
        per_cell: Option<u32>,
        /// Directory of trace JSON files replacing the built-in library.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Closed-loop monitoring, prediction and allocation run.
    Pipeline {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
        /// Scenario JSON; the built-in six-session scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        ifo: Option<FlowOption>,
        #[arg(long)]
        freq_hz: Option<f64>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        policy: Option<AllocationPolicy>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let cfg = AppConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Ingest { input } => commands::ingest(&input, out),
        Command::ImportCsv {
            input,
            mapping,
            scale_max,
        } => commands::import_csv(&input, &mapping, scale_max, out),
        Command::ExtractFeatures { input } => commands::extract_features(&cfg, input.as_deref(), out),
        Command::Train {
            input,
            model,
            params,
            all_rows,
        } => commands::train(&cfg, input.as_deref(), &model, &params, all_rows, out),
        Command::Predict { input, model, scaler } => commands::predict(&cfg, &input, &model, &scaler, out),
        Command::Evaluate {
            input,
            model,
            scaler,
            all_rows,
        } => commands::evaluate(&cfg, input.as_deref(), &model, &scaler, all_rows, out),
        Command::GridSearch { input, model, grid } => {
            commands::grid_search(&cfg, input.as_deref(), &model, grid.as_deref(), out)
        }
        Command::LearningCurve { input } => commands::learning_curve(&cfg, input.as_deref(), out),
        Command::BenchTime { input, runs, warmup } => commands::bench_time(&cfg, input.as_deref(), runs, warmup, out),
        Command::Compare { input } => commands::compare(&cfg, input.as_deref(), out),
        Command::Simulate { per_cell, traces } => commands::simulate(&cfg, per_cell, traces.as_deref(), out),
        Command::Pipeline {
            model,
            scaler,
            scenario,
            ifo,
            freq_hz,
            epochs,
            policy,
        } => commands::pipeline(
            &cfg,
            commands::PipelineArgs {
                model: &model,
                scaler: &scaler,
                scenario: scenario.as_deref(),
                ifo,
                freq_hz,
                epochs,
                policy,
            },
            out,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Unconverged(models)) => {
            eprintln!("warning: not converged: {}", models.join(", "));
            ExitCode::from(3)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
