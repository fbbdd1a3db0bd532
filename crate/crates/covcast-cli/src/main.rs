//! Command-line driver for covariance-prediction experiments.
//!
//! Subcommands: `backtest` (full run), `regret` (log-likelihood regret
//! only), `weights` (combined-predictor weight trajectory), `simulate`
//! (generative mode). Exit codes: 0 success, 1 usage error, 2 data or
//! configuration error. `COVCAST_THREADS` caps the worker pool
//! (0 or unset = automatic).

mod config;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use covcast_core::backtest::{run_experiment, simulate_generative, BacktestError};
use covcast_core::market_data::load_returns_csv;

#[derive(Parser, Debug)]
#[command(
    name = "covcast",
    version,
    about = "Covariance prediction backtests, regret reports, and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment configuration file (INI-style sections).
    #[arg(long)]
    config: String,
    /// Override a config key, e.g. --set data.burn_in=250 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full experiment: regret series plus portfolio backtests.
    Backtest(CommonArgs),
    /// Run the predictor suite and emit only the regret outputs.
    Regret(CommonArgs),
    /// Emit the combined predictor's weight and effective-half-life trajectory.
    Weights(CommonArgs),
    /// Generative mode: simulate future return paths from a predictor.
    Simulate(CommonArgs),
}

/// Data and configuration failures all exit with code 2; usage errors
/// (flag parsing, COVCAST_THREADS) exit with code 1 before reaching here.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] config::ConfigError),
    #[error("{0}")]
    Backtest(#[from] BacktestError),
    #[error("{0}")]
    Data(#[from] covcast_core::market_data::MarketDataError),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Backtest(_) => "backtest",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprintln!("error[usage]: {err}");
            return ExitCode::from(1);
        }
    };

    if let Err(err) = init_thread_pool() {
        eprintln!("error[usage]: {err}");
        return ExitCode::from(1);
    }

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::from(2)
        }
    }
}

fn init_thread_pool() -> Result<(), String> {
    match std::env::var("COVCAST_THREADS") {
        Err(_) => Ok(()),
        Ok(text) => {
            let n: usize = text
                .parse()
                .map_err(|_| format!("COVCAST_THREADS must be an integer, got {text:?}"))?;
            if n == 0 {
                return Ok(()); // automatic sizing
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| format!("cannot size the worker pool: {e}"))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Backtest(args) => run_backtest(args, false),
        Command::Regret(args) => run_backtest(args, true),
        Command::Weights(args) => run_weights(args),
        Command::Simulate(args) => run_simulate(args),
    }
}

fn load(args: &CommonArgs, portfolios_off: bool) -> Result<config::Resolved, CliError> {
    let mut raw = config::RawConfig::from_file(&args.config)?;
    raw.apply_overrides(&args.overrides)?;
    let mut resolved = config::resolve(&raw, portfolios_off)?;
    if let Some(out) = &args.out {
        resolved.output_dir = out.clone();
    }
    Ok(resolved)
}

fn run_backtest(args: CommonArgs, regret_only: bool) -> Result<(), CliError> {
    let resolved = load(&args, regret_only)?;
    let returns = load_returns_csv(&resolved.csv_path, resolved.rf_column.as_deref())?;
    let report = run_experiment(&resolved.experiment, &returns)?;
    report.write_files(&resolved.output_dir)?;
    println!(
        "wrote {} predictor reports ({} evaluation days, {} to {}) to {}",
        report.predictors.len(),
        report.evaluation_days,
        report.eval_start,
        report.eval_end,
        resolved.output_dir.display()
    );
    Ok(())
}

fn run_weights(args: CommonArgs) -> Result<(), CliError> {
    let mut resolved = load(&args, true)?;
    resolved.experiment.predictors.retain(|p| {
        matches!(
            p,
            covcast_core::backtest::PredictorSpec::CmIewma { .. }
        )
    });
    if resolved.experiment.predictors.is_empty() {
        return Err(CliError::Config(config::ConfigError::Missing(
            "predictors.cm_iewma (required by the weights subcommand)".into(),
        )));
    }
    let returns = load_returns_csv(&resolved.csv_path, resolved.rf_column.as_deref())?;
    let report = run_experiment(&resolved.experiment, &returns)?;
    report.write_files(&resolved.output_dir)?;
    println!(
        "wrote weight trajectories for {} combined predictor(s) to {}",
        report.combined_weights.len(),
        resolved.output_dir.display()
    );
    Ok(())
}

fn run_simulate(args: CommonArgs) -> Result<(), CliError> {
    let resolved = load(&args, true)?;
    let returns = load_returns_csv(&resolved.csv_path, resolved.rf_column.as_deref())?;
    let spec = resolved
        .experiment
        .predictors
        .iter()
        .find(|p| p.name() == resolved.simulate.predictor)
        .ok_or_else(|| {
            CliError::Config(config::ConfigError::BadValue {
                key: "simulate.predictor".into(),
                message: format!(
                    "{:?} is not among the configured predictors",
                    resolved.simulate.predictor
                ),
            })
        })?;
    let paths = simulate_generative(
        &returns,
        spec,
        resolved.simulate.horizon,
        resolved.simulate.paths,
        resolved.experiment.seed,
    )?;
    std::fs::create_dir_all(&resolved.output_dir).map_err(|source| {
        CliError::Backtest(BacktestError::Io {
            path: resolved.output_dir.display().to_string(),
            source,
        })
    })?;
    for (i, path) in paths.iter().enumerate() {
        let file = resolved.output_dir.join(format!("sim_{i:03}.csv"));
        std::fs::write(&file, path.to_csv(None)).map_err(|source| {
            CliError::Backtest(BacktestError::Io {
                path: file.display().to_string(),
                source,
            })
        })?;
    }
    println!(
        "wrote {} simulated paths of {} days to {}",
        paths.len(),
        resolved.simulate.horizon,
        resolved.output_dir.display()
    );
    Ok(())
}
