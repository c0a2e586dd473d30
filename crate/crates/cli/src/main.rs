use std::process::ExitCode;

use clap::Parser;
use hillspec_cli::args::Cli;
use hillspec_cli::commands::{error_json, resolve, run};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match resolve(&cli).and_then(|config| run(&cli.command, &config)) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
