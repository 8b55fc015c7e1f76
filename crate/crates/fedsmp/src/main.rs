use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = fedsmp::cli::Cli::parse();
    let mut out = std::io::stdout().lock();
    match fedsmp::cli::execute(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
