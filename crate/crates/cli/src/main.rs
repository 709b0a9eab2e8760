use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match qrnn_cli::run(qrnn_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
