use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "qecs", version, about = "Streaming correlated matching decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a detection-event stream file into predictions.
    Decode(DecodeArgs),
    /// Decode a live stream from stdin or a TCP socket.
    Stream(StreamArgs),
    /// Sample shots from a detector error model into a stream file.
    Sample(SampleArgs),
    /// Send a stream file to a TCP listener at a fixed cycle rate.
    Replay(ReplayArgs),
    /// Fit the logical error per cycle from predictions and truth.
    Fit(FitArgs),
    /// Regress fitted error rates over code distance.
    Lambda(LambdaArgs),
    /// Summarize a metrics file.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// Detection-event stream file.
    #[arg(long)]
    pub shots: PathBuf,
    /// Decode each shot monolithically instead of in blocks.
    #[arg(long, conflicts_with_all = ["blocks", "workers"])]
    pub exact: bool,
    /// Cycles per block.
    #[arg(long, default_value_t = 10)]
    pub blocks: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Skip the correlation preweight pass.
    #[arg(long)]
    pub no_preweights: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Include latency fields in each prediction line.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub dem: PathBuf,
    /// Address to accept one connection on, e.g. 127.0.0.1:7000.
    #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
    pub listen: Option<String>,
    #[arg(long)]
    pub stdin: bool,
    #[arg(long, default_value_t = 10)]
    pub blocks: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub no_preweights: bool,
    /// Latency metrics (JSON lines).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Predictions (JSON lines); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fixed input latency added in timing reports, microseconds.
    #[arg(long, default_value_t = 0.0)]
    pub t_input_us: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t_output_us: f64,
    #[arg(long, default_value_t = 0.0)]
    pub t_control_us: f64,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub dem: PathBuf,
    #[arg(long)]
    pub shots: u64,
    #[arg(long)]
    pub cycles: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// True observables per shot (JSON lines).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write an open-ended header and end each shot with a terminator.
    #[arg(long)]
    pub unbounded: bool,
}

#[derive(Args)]
pub struct ReplayArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Cycles per second.
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub to: String,
}

#[derive(Args)]
pub struct FitArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Only fit shots of at least this many cycles.
    #[arg(long, default_value_t = 0)]
    pub min_cycles: u64,
    /// Count heralded shots as logical errors instead of dropping them.
    #[arg(long)]
    pub herald_as_error: bool,
    #[arg(long, default_value = "")]
    pub label: String,
}

#[derive(Args)]
pub struct LambdaArgs {
    /// JSON array of {"distance": d, "fit": <fit output>}.
    #[arg(long)]
    pub fits: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub metrics: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Decode(a) => commands::decode(a),
        Command::Stream(a) => commands::stream(a),
        Command::Sample(a) => commands::sample(a),
        Command::Replay(a) => commands::replay(a),
        Command::Fit(a) => commands::fit(a),
        Command::Lambda(a) => commands::lambda(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
