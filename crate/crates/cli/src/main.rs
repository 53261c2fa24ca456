use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nclab_core::Protocol;

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(
    name = "nclab",
    version,
    about = "Optimal control over lossy actuation channels: synthesis, cost analysis, simulation and allocation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Replace every channel mean with this delivery probability.
    #[arg(long)]
    upsilon: Option<f64>,
    /// Base seed, overriding the scenario's.
    #[arg(long, env = "NCLAB_SEED")]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SimMode {
    /// Re-plan at every step and apply the first input block.
    Receding,
    /// Apply the sequence planned at the evaluation state for one horizon.
    OpenLoop,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimal batch gain for one protocol.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
    },
    /// Expected cost at the evaluation state.
    Cost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
    },
    /// Costs of both protocols and their difference.
    Gap {
        #[command(flatten)]
        common: Common,
    },
    /// Costs of both protocols over a grid of channel means (CSV).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Points per axis. A multichannel sweep without --scalar has
        /// points^m rows.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0.01)]
        from: f64,
        #[arg(long, default_value_t = 1.0)]
        to: f64,
        /// Sweep a single probability shared by all channels.
        #[arg(long)]
        scalar: bool,
        /// CSV destination; standard output when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Shared delivery probability with the largest protocol gap.
    Maxdiff {
        #[command(flatten)]
        common: Common,
        /// Treat all channels as one shared channel.
        #[arg(long)]
        scalar: bool,
    },
    /// One simulated trajectory with packet loss and process noise (CSV).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
        #[arg(long, value_enum, default_value_t = SimMode::Receding)]
        mode: SimMode,
        /// Number of steps for receding-horizon runs; defaults to the
        /// scenario's.
        #[arg(long)]
        steps: Option<usize>,
        /// Replicate index whose derived seed drives the run.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the realized open-loop cost. Without
    /// --protocol both protocols run on common random numbers.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Closed-loop eigenvalues of A − B K.
    Eigs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
    },
    /// Cheapest channel means meeting a cost budget.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = nclab_core::allocation::DEFAULT_RESOLUTION)]
        resolution: f64,
        /// Frontier CSV destination.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Failure classes with their exit codes.
#[derive(Debug)]
enum Failure {
    /// Bad scenario or a domain error from the numerical core.
    Invalid(String),
    /// Well-formed arguments that the command cannot honour.
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Usage(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
