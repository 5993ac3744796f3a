use std::process::ExitCode;

use calli_cli::commands::{run, Cli};
use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if let Some(detail) = f.detail {
                eprintln!("{}", serde_json::to_string_pretty(&detail).unwrap_or_default());
            }
            ExitCode::from(f.code)
        }
    }
}
