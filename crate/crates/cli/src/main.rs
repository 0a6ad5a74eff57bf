//! `mtt`: synthetic data, dataset bundles, training, prediction and ensembles.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Subset};
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "mtt",
    version,
    about = "Multi-timeline transformer yield forecasting"
)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model interval such as 4h or 24h.
    #[arg(long, global = true)]
    interval: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic site dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build examples, split and normalizer from a dataset directory.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a prepared bundle.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write ordered forecasts for a bundle.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        /// Checkpoint JSON or the directory holding model.json.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
    },
    /// Score a model on the test rows against the prior-year baseline.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the three-member row-subset ensemble.
    EnsembleTrain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate member forecasts after auditing row isolation.
    EnsemblePredict {
        #[arg(long)]
        bundle: PathBuf,
        /// ensemble.json or its directory.
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
    },
    /// Finite-difference gradient checks for every op and the miniature model.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("PREMONITION_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Validation(anyhow::anyhow!(
            "PREMONITION_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    let cfg = || -> Result<RunConfig, Failure> {
        RunConfig::load(cli.run.config.as_deref())
            .and_then(|c| c.resolve(cli.run.seed, cli.run.interval.as_deref()))
            .map_err(Failure::Validation)
    };
    match &cli.command {
        Command::Synth { out } => commands::synth(&cfg()?, out),
        Command::Prepare { data, out } => commands::prepare(&cfg()?, data, out),
        Command::Train { bundle, out } => commands::train(&cfg()?, bundle, out),
        Command::Predict {
            bundle,
            model,
            out,
            subset,
        } => commands::predict(bundle, model, out, *subset),
        Command::Evaluate { bundle, model, out } => commands::evaluate(bundle, model, out),
        Command::EnsembleTrain { bundle, out } => commands::ensemble_train(&cfg()?, bundle, out),
        Command::EnsemblePredict {
            bundle,
            ensemble,
            out,
            subset,
        } => commands::ensemble_predict(bundle, ensemble, out, *subset),
        Command::Gradcheck { out } => {
            commands::gradcheck(cli.run.seed.unwrap_or(0), out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code() as u8)
        }
    }
}
