mod config;
mod data;
mod model;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

/// Broomrape detection from multispectral plot imagery over growth stages.
#[derive(Debug, Parser)]
#[command(name = "broomscan", version)]
struct Cli {
    /// Pipeline configuration (JSON); command-line flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic field: scenes per stage, regions, weather, ground truth.
    Synth(data::SynthArgs),
    /// Growing degree days and stage dates from a weather CSV.
    Gdd(data::GddArgs),
    /// Convert a digital-number scene to reflectance using panel observations.
    Calibrate(data::CalibrateArgs),
    /// Cut per-plant plots out of a scene.
    Crop(data::CropArgs),
    /// SAVI canopy mask of a reflectance plot.
    Mask(data::MaskArgs),
    /// Histogram features of one masked plot, or of a whole synthetic field.
    Features(data::FeaturesArgs),
    /// Mean-match or SMOTE a feature table.
    Balance(model::BalanceArgs),
    /// Train one LSTM on a feature table and save a checkpoint.
    Train(model::TrainArgs),
    /// Run detection scenarios and write the report table.
    Scenario(model::ScenarioArgs),
    /// Compare analytic and finite-difference gradients of a small LSTM.
    Gradcheck(model::GradcheckArgs),
    /// Render a report CSV as an aligned text table.
    Report(model::ReportArgs),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Invariant(m) => write!(f, "invariant violated: {m}"),
        }
    }
}

impl From<broomscan_core::Error> for CliError {
    fn from(e: broomscan_core::Error) -> Self {
        if e.is_invariant() {
            CliError::Invariant(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn run(cli: Cli) -> CliResult {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Synth(a) => data::synth(config, a),
        Command::Gdd(a) => data::gdd(config, a),
        Command::Calibrate(a) => data::calibrate(config, a),
        Command::Crop(a) => data::crop(config, a),
        Command::Mask(a) => data::mask(config, a),
        Command::Features(a) => data::features(config, a),
        Command::Balance(a) => model::balance(config, a),
        Command::Train(a) => model::train(config, a),
        Command::Scenario(a) => model::scenario(config, a),
        Command::Gradcheck(a) => model::gradcheck(config, a),
        Command::Report(a) => model::report(config, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // help and version requests are not errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("broomscan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
