//! `kagnn`: train, benchmark, evaluate and gradient-check KAN-based GNNs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 training
//! aborted on a non-finite loss, 4 gradient check failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::Settings;
use kagnn::Error;

#[derive(Parser, Debug)]
#[command(name = "kagnn", version, about = "KAN-based graph neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Run {
    /// Flat JSON file of settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model (grid search when a list setting has several values)
    /// and write a JSON report.
    Train(Run),
    /// Time and train a list of models; write a CSV table.
    Bench(Run),
    /// Check analytic gradients against finite differences.
    Gradcheck(Run),
    /// Score a checkpoint on the train/val/test split of a dataset.
    Eval(Run),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) => 1,
        Error::NumericAbort { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (run, cmd): (&Run, fn(&Settings) -> kagnn::Result<ExitCode>) = match &cli.command {
        Command::Train(r) => (r, |s| commands::train(s).map(|_| ExitCode::SUCCESS)),
        Command::Bench(r) => (r, |s| commands::bench(s).map(|_| ExitCode::SUCCESS)),
        Command::Eval(r) => (r, |s| commands::eval(s).map(|_| ExitCode::SUCCESS)),
        Command::Gradcheck(r) => (r, |s| {
            Ok(match commands::gradcheck(s)? {
                Ok(()) => ExitCode::SUCCESS,
                Err(commands::GradcheckFailed) => {
                    eprintln!("error: gradient check failed");
                    ExitCode::from(4)
                }
            })
        }),
    };
    let settings = match &run.config {
        Some(path) => Settings::from_file(path).and_then(|f| f.overridden_by(&run.settings)),
        None => Ok(run.settings.clone()),
    };
    match settings.and_then(|s| cmd(&s)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
