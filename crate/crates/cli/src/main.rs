use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use common2::sim_scheduler::Algorithm;
use common2::two_enqueuer::ConsensusMode;

mod artifacts;
mod replay;
mod stress;
mod verify;

/// Exit status when every property held.
const EXIT_OK: u8 = 0;
/// Exit status when a property was violated.
const EXIT_VIOLATION: u8 = 1;
/// Exit status for bad flags or configurations.
const EXIT_USAGE: u8 = 2;
/// Exit status for I/O failures, worker panics and similar.
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "common2", version, about = "Verify and stress the common2 wait-free queues")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check simulated executions exhaustively or on random schedules.
    Verify(VerifyArgs),
    /// Re-execute a stored trace and print its steps.
    Replay(ReplayArgs),
    /// Run the queue on real threads and check bounded windows.
    StressNative(StressArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Sesd,
    Semd,
    Temd,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Sesd => Algorithm::Sesd,
            AlgorithmArg::Semd => Algorithm::Semd,
            AlgorithmArg::Temd => Algorithm::Temd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ConsensusArg {
    Primitive,
    FromFetchAdd,
}

impl From<ConsensusArg> for ConsensusMode {
    fn from(c: ConsensusArg) -> Self {
        match c {
            ConsensusArg::Primitive => ConsensusMode::Primitive,
            ConsensusArg::FromFetchAdd => ConsensusMode::FromFetchAdd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exhaustive,
    Random,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 1)]
    enqueuers: usize,
    #[arg(long, default_value_t = 2)]
    dequeuers: usize,
    /// Enqueues per enqueuer.
    #[arg(long, default_value_t = 1)]
    enq_ops: usize,
    /// Dequeues per dequeuer.
    #[arg(long, default_value_t = 1)]
    deq_ops: u32,
    #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random schedules (random mode).
    #[arg(long, default_value_t = 10_000)]
    max_schedules: u64,
    /// How two-enqueuer consensus objects are built.
    #[arg(long, value_enum, default_value_t = ConsensusArg::FromFetchAdd)]
    consensus: ConsensusArg,
    /// Also store this many passing traces.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    #[arg(long, env = "COMMON2_OUT_DIR", default_value = "common2-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    trace: PathBuf,
    /// Print each operation's location and order point (one-enqueuer traces).
    #[arg(long)]
    annotate: bool,
}

#[derive(Args, Debug)]
struct StressArgs {
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Defaults to 1 for semd and 2 for temd.
    #[arg(long)]
    enqueuers: Option<usize>,
    #[arg(long, default_value_t = 4)]
    dequeuers: usize,
    #[arg(long, default_value_t = 2000)]
    ops_per_thread: usize,
    /// Stop starting new windows after this many seconds.
    #[arg(long)]
    duration_secs: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Operations per thread in each checked window.
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[arg(long, value_enum, default_value_t = ConsensusArg::FromFetchAdd)]
    consensus: ConsensusArg,
    #[arg(long, env = "COMMON2_OUT_DIR", default_value = "common2-out")]
    out: PathBuf,
}

/// A failure that decides the exit status.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Internal(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(args) => verify::run(&args),
        Command::Replay(args) => replay::run(&args),
        Command::StressNative(args) => stress::run(&args),
    };
    match result {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_VIOLATION),
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}\n\nFor more information, try '--help'.");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}
