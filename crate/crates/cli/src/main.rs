mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use toothsparse::{Error, ErrorKind};

use commands::Cli;

/// Exit status plus the record printed on stderr.
#[derive(Debug, Serialize)]
pub struct Failure {
    #[serde(skip)]
    pub code: u8,
    pub error: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, error: "usage", message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 2, error: "data", message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 3, error: "numerical", message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.kind() {
            ErrorKind::Usage => Failure::usage(e.to_string()),
            ErrorKind::Data => Failure::data(e.to_string()),
            ErrorKind::Numerical => Failure::numerical(e.to_string()),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("TOOTHSPARSE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("TOOTHSPARSE_THREADS={value:?} is not a count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are not errors
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let failure = Failure::usage(e.to_string().trim_end());
            eprintln!("{}", serde_json::to_string(&failure).unwrap_or_default());
            return ExitCode::from(1);
        }
    };
    match configure_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).unwrap_or_default());
            ExitCode::from(f.code)
        }
    }
}
