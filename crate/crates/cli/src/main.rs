use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = kcorr_cli::Cli::parse();
    match kcorr_cli::run(&cli) {
        Ok(manifest) => {
            eprintln!("kcorr {}: wrote {} file(s)", manifest.command, manifest.outputs.len() + 1);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
