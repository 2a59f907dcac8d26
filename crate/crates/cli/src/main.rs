//! `hedgekit`: simulate, train, evaluate, price and sweep hedging experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::Mode;

#[derive(Parser, Debug)]
#[command(name = "hedgekit", version, about = "Deep hedging of barrier options under RDEU risk measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Market flags set the training market for
/// simulate/train/sweep and the actual (evaluation) market for evaluate/price.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Flat `section.key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub rho: Option<f64>,
    /// Proportional transaction cost rate.
    #[arg(long, allow_negative_numbers = true)]
    pub cost: Option<f64>,
    /// Wasserstein ball radius (robust mode).
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// Lower-tail weight of the alpha-beta risk measure.
    #[arg(long = "p-weight", allow_negative_numbers = true)]
    pub p_weight: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Number of paths to simulate or evaluate on.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate price paths and write them as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train a hedging policy; writes a checkpoint and the training history.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Evaluate a trained policy against the Black-Scholes benchmark.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Price the option so that the hedged position hits a reported-risk target.
    Price {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Adversary checkpoint; the robust price is taken against its worst-case wealth.
        #[arg(long)]
        adversary: Option<PathBuf>,
        #[arg(long, allow_negative_numbers = true)]
        target: Option<f64>,
    },
    /// Train one policy per lower-tail weight and record tail expectations.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated lower-tail weights.
        #[arg(long = "p-grid", value_delimiter = ',')]
        p_grid: Option<Vec<f64>>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common }
            | Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Price { common, .. }
            | Command::Sweep { common, .. } => common,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Usage(first_line(&e.to_string()))),
    };
    let level = match cli.command.common().verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn first_line(text: &str) -> String {
    text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string()
}

fn report(err: &CliError) -> ExitCode {
    eprintln!("{}", err.to_json_line());
    ExitCode::from(err.exit_code())
}
