//! `gotcha` command-line tool. Every command runs through the HTTP client,
//! against an embedded server on a loopback port unless `--server` is given.

mod args;
mod commands;
mod inputs;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use gotcha_client::ClientError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or parameters. Exit 2.
    Config(String),
    /// Anything that went wrong after the inputs were accepted. Exit 3.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { status, error } if (400..500).contains(status) && *status != 404 => {
                CliError::Config(error.message.clone())
            }
            ClientError::Api { error, .. } => CliError::Runtime(error.message.clone()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(3);
        }
    };
    match runtime.block_on(commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
