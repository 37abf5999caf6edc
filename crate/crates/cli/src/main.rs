use std::process::ExitCode;

use clap::Parser;
use visk_cli::{run, Cli};

fn main() -> ExitCode {
    // usage errors exit with 2, --help and --version with 0
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
