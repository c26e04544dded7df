use std::process::ExitCode;

use clap::Parser;
use upho_gateway::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Usage errors exit with 2; --help and --version with 0.
        Err(e) => e.exit(),
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {}", e.stage, e.message);
            ExitCode::from(1)
        }
    }
}
