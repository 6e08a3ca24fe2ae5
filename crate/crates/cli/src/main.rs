//! `trafficgraph` command line: preprocess captures into datasets, train and
//! evaluate the classifiers, run the two-stage framework over a capture.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use commands::{EvalCmd, GradcheckCmd, PreprocessCmd, RunCmd, SynthCmd, TrainCmd};
use config::{ConfigError, FileConfig};

#[derive(Debug, Parser)]
#[command(name = "trafficgraph", version, about = "Packet traffic-graph classification and dispatch")]
struct Cli {
    /// Config file, JSON or `key = value` lines; flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice [default: 20200805]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log more to standard error (repeat for more)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn capture files into a labeled NPY dataset
    Preprocess(PreprocessCmd),
    /// Train a 3-class or 6-class model on a dataset
    Train(TrainCmd),
    /// Score a checkpoint on a dataset
    Eval(EvalCmd),
    /// Classify every packet of a capture and dispatch the results
    Run(RunCmd),
    /// Compare every backward pass with finite differences
    Gradcheck(GradcheckCmd),
    /// Write a seeded synthetic dataset
    Synth(SynthCmd),
}

/// A check ran and found a problem (exit status 3).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct VerificationFailed(pub String);

/// 0 success, 1 I/O, 2 format or configuration, 3 verification.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<VerificationFailed>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<trafficgraph::Error>() {
            return if matches!(e, trafficgraph::Error::Io(_)) { 1 } else { 2 };
        }
        if cause.is::<std::io::Error>() {
            return 1;
        }
        if cause.is::<ConfigError>() {
            return 2;
        }
    }
    2
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(trafficgraph::DEFAULT_SEED);
    match cli.command {
        Command::Preprocess(c) => commands::preprocess(c, &file),
        Command::Train(c) => commands::train(c, &file, seed),
        Command::Eval(c) => commands::eval(c),
        Command::Run(c) => commands::run(c, &file),
        Command::Gradcheck(c) => commands::gradcheck(c, seed),
        Command::Synth(c) => commands::synth(c, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
