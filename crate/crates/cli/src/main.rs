mod args;
mod commands;
mod fail;
mod montage;

use std::process::ExitCode;

use clap::Parser;

use args::{normalize_args, Cli, Command};
use fail::{EXIT_OK, EXIT_USAGE};

fn main() -> ExitCode {
    let argv = normalize_args(std::env::args());
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match &cli.command {
        Command::Trimap(a) => commands::trimap::run(a),
        Command::Mat(a) => commands::mat::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Phantom(a) => commands::phantom::run(a),
        Command::Pipeline(a) => commands::pipeline::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
