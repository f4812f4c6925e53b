//! `embalign`: synthetic worlds, alignment, spoofing evaluation and the
//! method-comparison grid from the command line.
//!
//! Exit codes: 0 success, 1 environment or I/O failure, 2 usage or
//! validation error.

mod args;
mod commands;
mod error;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&cli.global, a),
        Command::Align(a) => commands::align(&cli.global, a),
        Command::Eval(a) => commands::eval(&cli.global, a),
        Command::Experiment(a) => commands::experiment(&cli.global, a),
        Command::GmmFit(a) => commands::gmm_fit(&cli.global, a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
