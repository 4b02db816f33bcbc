use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gacunet::cli::{self, Command};

/// Flood segmentation with a graph-attention U-Net.
///
/// Every command accepts `--config PATH`, `--deterministic` and `--key value`
/// overrides for any config key.
#[derive(Parser)]
#[command(name = "gacunet", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a corpus and write the augmented train set
    Prepare(Rest),
    /// Train a model on a prepared corpus
    Train(Rest),
    /// Score a model on the test split
    Eval(Rest),
    /// Write a binary mask for one image
    Predict(Rest),
    /// Train a reprogramming wrapper around a frozen base model
    Reprogram(Rest),
    /// Run the finite-difference gradient suite
    Gradcheck(Rest),
    /// Summarize an image/mask corpus
    DatasetStats(Rest),
    /// Write a synthetic flood corpus
    Synth(Rest),
    /// Train a base model for reprogramming
    PretrainBase(Rest),
}

#[derive(clap::Args)]
struct Rest {
    #[arg(
        trailing_var_arg = true,
        allow_hyphen_values = true,
        value_name = "--KEY VALUE"
    )]
    args: Vec<String>,
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, rest) = match parsed.command {
        Cmd::Prepare(r) => (Command::Prepare, r),
        Cmd::Train(r) => (Command::Train, r),
        Cmd::Eval(r) => (Command::Eval, r),
        Cmd::Predict(r) => (Command::Predict, r),
        Cmd::Reprogram(r) => (Command::Reprogram, r),
        Cmd::Gradcheck(r) => (Command::Gradcheck, r),
        Cmd::DatasetStats(r) => (Command::DatasetStats, r),
        Cmd::Synth(r) => (Command::Synth, r),
        Cmd::PretrainBase(r) => (Command::PretrainBase, r),
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = cli::run_args(command, &rest.args, &mut out);
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
