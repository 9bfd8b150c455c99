#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod analyze;
mod args;
mod common;
mod config;
mod data;
mod exit;
mod train;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, Simulate};
use exit::Failure;

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate(Simulate::Hawkes(a)) => data::simulate_hawkes(a),
        Command::Simulate(Simulate::Ehr(a)) => data::simulate_ehr(a),
        Command::Train(a) => train::run_train(train::Kind::Train, a),
        Command::Pretrain(a) => train::run_train(train::Kind::Pretrain, a),
        Command::Finetune(a) => train::run_finetune(a),
        Command::Evaluate(a) => analyze::run_evaluate(a),
        Command::Aggregate(a) => analyze::run_aggregate(a),
        Command::Embed(a) => analyze::run_embed(a),
        Command::Knnps(a) => analyze::run_knnps(a),
        Command::Convert(a) => data::convert(a),
    }
}

/// The error chain, leaving out causes whose text a parent already shows.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn clap_exit(e: &clap::Error) -> ExitCode {
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            ExitCode::SUCCESS
        }
        _ => ExitCode::from(exit::USAGE),
    }
}

fn main() -> ExitCode {
    let argv: Vec<_> = std::env::args_os().collect();
    let verbose = argv.iter().filter(|a| *a == "-v" || *a == "--verbose").count()
        + argv.iter().filter(|a| *a == "-vv").count() * 2;
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let argv = match config::layered_args(argv) {
        Ok(a) => a,
        Err(Failure::Clap(e)) => return clap_exit(&e),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {}", describe(&e));
            return ExitCode::from(exit::USAGE);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => return clap_exit(&e),
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit::code(&e))
        }
    }
}
