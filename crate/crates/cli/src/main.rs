//! `dalign`: build a toy detector, score it, and measure how well its
//! explanations line up with the lines a fix touched.

mod commands;
mod config;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigArgs, RunConfig};

/// Bad input that is not an I/O failure.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

#[derive(Parser)]
#[command(name = "dalign", version, about = "Detection alignment toolkit")]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with one planted vulnerable line.
    Synth,
    /// Derive vulnerable lines from (code, fixed_code) pairs.
    ExtractGt,
    /// Train a byte-level BPE vocabulary on the dataset.
    TrainVocab,
    /// Train the toy classifier and write a checkpoint.
    TrainModel,
    /// Compute token relevance for every function.
    Score,
    /// Compute per-sample alignment and the summary.
    Evaluate,
    /// Print the summary table and write the line heat-map CSV.
    Report,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.is::<std::io::Error>() || e.downcast_ref::<dalign_core::Error>().is_some_and(dalign_core::Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::resolve(&cli.config)?;
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::ExtractGt => commands::extract_gt(&cfg),
        Command::TrainVocab => commands::train_vocab(&cfg),
        Command::TrainModel => commands::train_model(&cfg),
        Command::Score => commands::score(&cfg),
        Command::Evaluate => commands::evaluate_cmd(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
