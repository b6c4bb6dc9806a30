//! `loramix`: the experiment lifecycle from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 format or validation error,
//! 3 training divergence.

mod commands;
mod common;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loramix_core::Error;

#[derive(Parser)]
#[command(name = "loramix", version, about = "LoRA adapters, mixtures and continual adaptation for toy NMT")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus.
    Synth(commands::synth::Args),
    /// Pretrain a base model.
    Train(commands::train::Args),
    /// Train a LoRA adapter on a frozen base.
    LoraTrain(commands::lora::Args),
    /// Accumulate gradient importance for a trained adapter.
    Importance(commands::importance::Args),
    /// Adapter quality against rank, with full fine-tuning as the ceiling.
    RankSweep(commands::sweep::Args),
    /// Pick per-adapter λ by coordinate-wise maximin over domains.
    Calibrate(commands::calibrate::Args),
    /// Score a base (optionally under a mixture) on a corpus.
    Eval(commands::eval::Args),
    /// Sequential A→B adaptation under none / l2 / grad regularisation.
    ForgettingRun(commands::forgetting::Args),
    /// Run the HTTP translation service.
    Serve(commands::serve::Args),
    /// Talk to a running service.
    Remote(commands::remote::Args),
    /// Re-check the hashes and formats listed in an output manifest.
    Verify(commands::verify::Args),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Usage(_) => 1,
                Error::Divergence { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::LoraTrain(a) => commands::lora::run(a),
        Command::Importance(a) => commands::importance::run(a),
        Command::RankSweep(a) => commands::sweep::run(a),
        Command::Calibrate(a) => commands::calibrate::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::ForgettingRun(a) => commands::forgetting::run(a),
        Command::Serve(a) => commands::serve::run(a),
        Command::Remote(a) => commands::remote::run(a),
        Command::Verify(a) => commands::verify::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
