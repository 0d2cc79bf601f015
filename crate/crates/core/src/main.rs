use clap::Parser;
use std::process::ExitCode;

use magenergy::cli::{init_threads, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|_| run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("magenergy: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
