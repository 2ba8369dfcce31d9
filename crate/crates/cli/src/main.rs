//! `pilotforge`: pilot pattern optimization and evaluation.

mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pilotforge::waveform::BandMode;

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "pilotforge", version, about = "Multi-user OFDM pilot pattern design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a pilot pattern; writes pattern.json and trace.csv.
    Optimize(Common),
    /// Integrated side-lobe level of each pattern; writes isl.json.
    Isl(Common),
    /// Resolution limit of each pattern; writes srl.json.
    Srl(Common),
    /// Ambiguity magnitude sweep; writes af.csv.
    Af(Common),
    /// Monte-Carlo extrapolation error against the baselines; writes nmse.csv.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a JSON/CSV output to rerun from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pattern file; `uniform` or `random` select a baseline. Repeatable.
    #[arg(long = "pattern")]
    patterns: Vec<String>,
    #[arg(long, value_enum)]
    band: Option<BandArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    Single,
    Multi,
}

fn set_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("PILOTFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("PILOTFORGE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    set_threads()?;
    let common = match &cli.command {
        Command::Optimize(c) | Command::Isl(c) | Command::Srl(c) | Command::Af(c) | Command::Simulate(c) => c,
    };
    let raw = match &common.config {
        Some(p) => artifact::load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let band = common.band.map(|b| match b {
        BandArg::Single => BandMode::Single,
        BandArg::Multi => BandMode::Multi,
    });
    let out = common
        .out
        .clone()
        .or_else(|| raw.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let cfg = raw.resolve(common.seed, band)?;
    let patterns = &common.patterns;
    match &cli.command {
        Command::Optimize(_) => commands::optimize(cfg, &out),
        Command::Isl(_) => commands::isl_cmd(cfg, &out, patterns),
        Command::Srl(_) => commands::srl_cmd(cfg, &out, patterns),
        Command::Af(_) => commands::af_cmd(cfg, &out, patterns),
        Command::Simulate(_) => commands::simulate(cfg, &out, patterns),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pilotforge: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
