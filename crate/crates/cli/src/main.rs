use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{CommonArgs, FileConfig, ReferenceArg, Settings};

/// Monotonic multihead attention workbench: alignments, head-synchronous
/// decoding, oracle and gradient checks, and a toy training harness.
#[derive(Debug, Parser)]
#[command(name = "mcmma", version)]
struct Cli {
    /// TOML file with defaults for any flag; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Expected alignments (α, γ̂ or δ̂) of a probability file.
    Align(Plain),
    /// Head-synchronous decode of a probability file or a checkpoint.
    Decode(DecodeArgs),
    /// Compare the kernels with brute-force oracles.
    OracleCheck(OracleArgs),
    /// Compare every adjoint with central finite differences.
    Gradcheck(GradArgs),
    /// Train the toy model.
    Train(TrainArgs),
    /// Sweep the decode waiting threshold on trained checkpoints.
    Eval(EvalArgs),
    /// Like `eval`, always writing the SVG trade-off chart.
    Tradeoff(EvalArgs),
}

#[derive(Debug, Args)]
struct Plain {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Latency report path (default: next to --output).
    #[arg(long)]
    latency: Option<PathBuf>,
    /// Boundaries the latency is measured against.
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// Utterance index when decoding a checkpoint.
    #[arg(long, default_value_t = 0)]
    example: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Random instances per grid point.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long, default_value_t = 8)]
    max_frames: usize,
    #[arg(long, default_value_t = 4)]
    max_steps: usize,
    #[arg(long, default_value_t = 3)]
    max_heads: usize,
    /// Random instances for the normalisation and reduction checks.
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    /// Monte Carlo samples per (M, ε) configuration.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training log path (default: `<output stem>.log.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    reference: Option<ReferenceArg>,
    /// SVG chart path (`tradeoff` defaults to `<output stem>.svg`).
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Number of held-out utterances to decode.
    #[arg(long)]
    examples: Option<usize>,
}

fn settings(config: Option<&PathBuf>, common: &CommonArgs) -> anyhow::Result<Settings> {
    let file = match config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Settings::resolve(file, common)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = cli.config.as_ref();
    match cli.command {
        Command::Align(a) => commands::align(&settings(cfg, &a.common)?),
        Command::Decode(a) => commands::decode(&settings(cfg, &a.common)?, &a),
        Command::OracleCheck(a) => commands::oracle_check(&settings(cfg, &a.common)?, &a),
        Command::Gradcheck(a) => commands::gradcheck(&settings(cfg, &a.common)?, &a),
        Command::Train(a) => commands::train(&settings(cfg, &a.common)?, &a),
        Command::Eval(a) => commands::eval(&settings(cfg, &a.common)?, &a, false),
        Command::Tradeoff(a) => commands::eval(&settings(cfg, &a.common)?, &a, true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
