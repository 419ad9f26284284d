//! `gcgnet` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcgnet::data::MaskSpec;
use gcgnet::model::Variant;

use commands::{EvalArgs, ForecastArgs, GRADCHECK_TOL};
use config::UsageError;

#[derive(Parser)]
#[command(name = "gcgnet", version, about = "Graph-consistent generative forecasting with exogenous inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config and write checkpoint, history and metrics.
    Train {
        config: PathBuf,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an ablation variant (`full`, `a`, `b`, `c` or `d`).
    Ablate {
        config: PathBuf,
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the validation and test splits of a config's data.
    Eval {
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Forecast from generated future exogenous values.
        #[arg(long)]
        no_future_exo: bool,
        /// Mask exogenous test inputs, `kind:ratio:seed`; repeatable.
        #[arg(long = "mask")]
        masks: Vec<MaskSpec>,
        /// Write resolved_config.toml and metrics.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forecast past the end of a CSV with a trained checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Emit only the first `horizon` steps.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        no_future_exo: bool,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset CSV and its generation record.
    Synth {
        /// TOML file with synthetic-spec fields; defaults when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of every model variant.
    Gradcheck {
        /// TOML file with model fields; the micro config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        step: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train { config, out } => commands::train_cmd(&config, out, None)?,
        Command::Ablate { config, variant, out } => commands::train_cmd(&config, out, Some(variant))?,
        Command::Eval {
            config,
            checkpoint,
            no_future_exo,
            masks,
            out,
        } => commands::eval_cmd(EvalArgs {
            config,
            checkpoint,
            no_future_exo,
            masks,
            out,
        })?,
        Command::Forecast {
            checkpoint,
            csv,
            horizon,
            no_future_exo,
            out,
        } => commands::forecast_cmd(ForecastArgs {
            checkpoint,
            csv,
            horizon,
            no_future_exo,
            out,
        })?,
        Command::Synth { spec, seed, out } => commands::synth_cmd(spec, seed, &out)?,
        Command::Gradcheck { config, seed, step } => {
            return Ok(commands::gradcheck_cmd(config, seed, step)? < GRADCHECK_TOL);
        }
    }
    Ok(true)
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || matches!(
                e.downcast_ref::<gcgnet::Error>(),
                Some(
                    gcgnet::Error::Config(_)
                        | gcgnet::Error::Split(_)
                        | gcgnet::Error::MissingColumn(_)
                        | gcgnet::Error::SeriesTooShort { .. }
                )
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
