use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtmix_cli::commands::{self, EvaluateArgs, ExportArgs, ForecastArgs, SimulateArgs, TrainArgs};
use rtmix_cli::CliError;

/// Reactive mixing simulation and surrogate forecasting.
///
/// Set RTMIX_THREADS to bound the worker pool; results do not depend on it.
#[derive(Parser)]
#[command(name = "rtmix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the finite element simulation and write an RTMX dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print only the totals.
        #[arg(long)]
        quiet: bool,
    },
    /// Train the CNN-LSTM on the first fraction of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Roll a trained model forward to the last step of a dataset.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a forecast with the simulated product concentration.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Output directory for CSVs and the final error image.
        #[arg(long)]
        out: PathBuf,
        /// Percent error threshold for the report.
        #[arg(long, default_value_t = 10.0)]
        threshold: f64,
    },
    /// Render one frame of one channel as a graymap.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "c_C")]
        channel: String,
        /// 0-based frame index.
        #[arg(long)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("RTMIX_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("RTMIX_THREADS must be a non-negative integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let stdout = io::stdout();
    let mut log = stdout.lock();
    match cli.command {
        Command::Simulate { config, out, quiet } => {
            commands::simulate(&SimulateArgs { config, out, quiet }, &mut log)?;
        }
        Command::Train { data, fraction, out, window, epochs, batch, seed, learning_rate } => {
            let args = TrainArgs { data, fraction, out, window, epochs, batch, seed, learning_rate };
            commands::train(&args, &mut log)?;
        }
        Command::Forecast { model, data, out } => {
            commands::forecast(&ForecastArgs { model, data, out }, &mut log)?;
        }
        Command::Evaluate { truth, pred, out, threshold } => {
            commands::evaluate(&EvaluateArgs { truth, pred, out, threshold }, &mut log)?;
        }
        Command::Export { data, channel, step, out } => {
            commands::export(&ExportArgs { data, channel, step, out }, &mut log)?;
        }
    }
    log.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
