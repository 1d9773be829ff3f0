mod detect;
mod output;
mod replica;
mod sample;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netoutlier::Error;

#[derive(Debug, Parser)]
#[command(name = "netoutlier", version, about = "Edgewise outlier detection on networks")]
struct Cli {
    /// Master seed; NETOUTLIER_SEED takes precedence when set.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for simulation replications and the four starts.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the edgewise MCD and report edge and node outliers.
    Detect(detect::DetectArgs),
    /// Run a simulation study from a JSON grid configuration.
    Simulate(simulate::SimulateArgs),
    /// Draw one dataset from the model on a given network.
    Sample(sample::SampleArgs),
    /// Write the synthetic election-shaped compositional dataset.
    Replica(replica::ReplicaArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Lib(Error),
    Io { path: PathBuf, source: std::io::Error },
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 1,
            CliError::Lib(e) => match e {
                Error::Parse(_) | Error::InvalidInput(_) => 2,
                Error::DimensionMismatch(_) | Error::MissingValue(_) | Error::Domain(_) => 3,
                Error::Disconnected { .. } => 4,
                Error::NotPositiveDefinite(_)
                | Error::RankDeficient(_)
                | Error::DegenerateColumn { .. }
                | Error::Degenerate(_) => 5,
                Error::Io(_) => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Seed from `NETOUTLIER_SEED`, then `--seed`, then `default`.
fn resolve_seed(flag: Option<u64>, default: u64) -> CliResult<u64> {
    match std::env::var("NETOUTLIER_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("NETOUTLIER_SEED='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(default)),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let ctx = output::Context { seed_flag: cli.seed, threads: cli.threads };
    match cli.command {
        Command::Detect(a) => detect::run(&a, &ctx),
        Command::Simulate(a) => simulate::run(&a, &ctx),
        Command::Sample(a) => sample::run(&a, &ctx),
        Command::Replica(a) => replica::run(&a, &ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
