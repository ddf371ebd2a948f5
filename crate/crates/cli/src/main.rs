//! `tqrnn`: generate synthetic plant traces, train the quantile networks and
//! transformers, predict, evaluate the ablation and benchmark latency.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tqrnn", version, about = "Quantile-ratio transformer pipeline for machine failure prediction")]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set transformer.model_dim=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic plant trace per seed.
    Generate,
    /// Train stage-1 and stage-2 quantile networks per seed.
    TrainQrnn,
    /// Train the transformers of the configured variants and horizons.
    TrainTransformer,
    /// Score sequences of a trace with a saved transformer.
    Predict(commands::PredictArgs),
    /// Evaluate every configured (variant, horizon, seed) cell.
    Evaluate(commands::EvaluateArgs),
    /// Time streaming inference cycles at the latency settings.
    Bench,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::from(2)
        }
    }
}
