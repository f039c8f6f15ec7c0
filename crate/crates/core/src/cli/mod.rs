//! `bbcal` command-line interface.

mod commands;
mod config;
mod dataset;
mod output;

pub use config::{ModelChoice, RunConfig};
pub use dataset::{dataset_files, load_dataset, Dataset, DatasetMeta};
pub use output::OutputSet;

use crate::diagnostics::DiagnosticsError;
use crate::estimation::EstimationError;
use crate::metrics::MetricsError;
use crate::oracle::OracleError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("ingestion: {0}")]
    Ingestion(String),
    #[error("oracle: {0}")]
    Oracle(OracleError),
    #[error("budget: run needs {planned} queries but the cap is {cap}")]
    Budget { planned: u64, cap: u64 },
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Ingestion(_) => 3,
            Self::Oracle(_) => 4,
            Self::Budget { .. } => 5,
            Self::Io(_) | Self::Other(_) => 1,
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Oracle(e)
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        match e {
            EstimationError::Oracle(o) => o.into(),
            EstimationError::Config(m) => Self::Config(m),
            EstimationError::Transform(t) => Self::Config(t.to_string()),
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Oracle(o) => o.into(),
            DiagnosticsError::Transform(t) => Self::Config(t.to_string()),
            DiagnosticsError::TooFewSamples { .. } | DiagnosticsError::TooFewDraws { .. } | DiagnosticsError::BadGrid => {
                Self::Config(e.to_string())
            }
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "bbcal", version, about = "Calibrated confidence for top-1-only classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat JSON config; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub settings: RunConfig,
}

impl RunArgs {
    pub fn resolve(self) -> Result<RunConfig, CliError> {
        let base = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(self.settings))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GainChoice {
    Linear,
    Nonlinear,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2500)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub height: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 16)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    #[arg(long, value_enum, default_value_t = GainChoice::Nonlinear)]
    pub gain: GainChoice,
    /// Tune the logit scale to this expected accuracy.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate per-sample confidences and score them on the test split.
    Estimate(RunArgs),
    /// Grid-search the scale (and transform) on the validation split.
    Fit(RunArgs),
    /// Latent-noise Var/KS statistics for a white-box model.
    Diagnose(RunArgs),
    /// Learn an empirical latent-noise CDF for the transfer model.
    TransferFit(RunArgs),
    /// Estimate at several sample counts.
    Sweep(RunArgs),
    /// Aggregate run reports and correlate diagnostics with metrics.
    Report(RunArgs),
    /// Write a synthetic model and a dataset drawn from it.
    Synth(SynthArgs),
}

/// Runs one command and prints its one-line JSON summary.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let summary = match cli.command {
        Command::Synth(args) => commands::synth(&args)?,
        Command::Estimate(a) => with_pool(a.resolve()?, commands::estimate)?,
        Command::Fit(a) => with_pool(a.resolve()?, commands::fit)?,
        Command::Diagnose(a) => with_pool(a.resolve()?, commands::diagnose)?,
        Command::TransferFit(a) => with_pool(a.resolve()?, commands::transfer_fit)?,
        Command::Sweep(a) => with_pool(a.resolve()?, commands::sweep)?,
        Command::Report(a) => commands::report(&a.resolve()?)?,
    };
    println!("{summary}");
    Ok(())
}

fn with_pool(
    cfg: RunConfig,
    f: fn(&RunConfig) -> Result<serde_json::Value, CliError>,
) -> Result<serde_json::Value, CliError> {
    match cfg.max_in_flight {
        Some(0) => Err(CliError::Config("max_in_flight must be >= 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?
            .install(|| f(&cfg)),
        None => f(&cfg),
    }
}

/// Process entry: parses arguments, runs, and maps errors to exit codes.
pub fn main_exit() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
