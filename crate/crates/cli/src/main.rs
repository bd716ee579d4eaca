//! `fpnr`: simulate fixed-pattern noise, correct it, train the cascade
//! network and benchmark every method on a noise grid.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpnr_core::sim::GainGeometry;

use crate::error::{CliError, ExitKind};

#[derive(Parser)]
#[command(
    name = "fpnr",
    version,
    about = "Fixed-pattern noise simulation, correction and benchmarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt a clean image with a seeded gain/offset pattern.
    Simulate(SimulateArgs),
    /// Correct one frame or a temporal sequence.
    Correct(CorrectArgs),
    /// Train a cascade model from a JSON run config.
    Train(ConfigArgs),
    /// Run the noise-grid benchmark from a JSON run config.
    Bench(ConfigArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Geometry {
    StripeColumn,
    PerPixel,
}

impl From<Geometry> for GainGeometry {
    fn from(g: Geometry) -> Self {
        match g {
            Geometry::StripeColumn => GainGeometry::StripeColumn,
            Geometry::PerPixel => GainGeometry::PerPixel,
        }
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.08)]
    pub sigma_g: f64,
    #[arg(long, default_value_t = 10.0)]
    pub sigma_o: f64,
    #[arg(long, value_enum, default_value_t = Geometry::StripeColumn)]
    pub geometry: Geometry,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    TwoPoint,
    Nn,
    Fa,
    Tv,
    Cnn,
}

#[derive(Args)]
pub struct CorrectArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Frames in temporal order; scene-based methods carry state across them.
    #[arg(long = "input", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output file for a single frame, or a directory for several.
    #[arg(long)]
    pub output: PathBuf,
    /// Checkpoint for `cnn`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Low reference frames for `two-point`.
    #[arg(long, num_args = 1..)]
    pub refs_low: Vec<PathBuf>,
    /// High reference frames for `two-point`.
    #[arg(long, num_args = 1..)]
    pub refs_high: Vec<PathBuf>,
    /// JSON object overriding fields of the scene-based solver settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Clean frames, one per input, for the metric report.
    #[arg(long, num_args = 1..)]
    pub truth: Vec<PathBuf>,
    /// Metric report path; defaults to `<output>.metrics.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for attention masks and gain/offset maps (`cnn` only).
    #[arg(long)]
    pub dump_features: Option<PathBuf>,
}

#[derive(Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                ExitKind::Usage as u8
            } else {
                0
            });
        }
    };
    let result: Result<(), CliError> = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Correct(a) => commands::correct(&a),
        Command::Train(a) => commands::train(&a.config),
        Command::Bench(a) => commands::bench(&a.config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
    }
}
