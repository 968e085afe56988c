//! `sqparse` command-line tool.
//!
//! Every subcommand prints one JSON line on stdout; diagnostics go to
//! stderr. Exit codes: 0 success, 1 check failure, 2 usage or input error,
//! 3 runtime failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] sqparse::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use sqparse::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(E::AllRestartsFailed(_) | E::NoActivePrimitives | E::NonFiniteLoss) => 3,
            CliError::Core(_) => 2,
        }
    }
}

/// Result of a subcommand that ran to completion: the JSON line to print and
/// whether its check (if any) passed.
pub struct Report {
    pub json: serde_json::Value,
    pub passed: bool,
}

impl Report {
    fn ok(json: serde_json::Value) -> Self {
        Self { json, passed: true }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = sqparse::par::configure_threads(cli.threads) {
        eprintln!("warning: could not size the worker pool: {e}");
    }

    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::CheckGrad(a) => commands::check_grad(a),
        Command::CheckLoss(a) => commands::check_loss(a),
        Command::Export(a) => commands::export(a),
        Command::Sample(a) => commands::sample(a),
    };
    match result {
        Ok(report) => {
            println!("{}", report.json);
            ExitCode::from(if report.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
