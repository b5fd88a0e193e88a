use serde::Serialize;
use structconv::Error;

use crate::args::Format;

/// Exit code plus the message printed to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn check(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::ResidualExceeded { .. } | Error::Divergence { .. } => 1,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

/// Prints `value` as one JSON document, or `table` as is.
pub fn emit<T: Serialize>(format: Format, value: &T, table: impl FnOnce() -> String) -> Result<(), Failure> {
    match format {
        Format::Json => {
            let doc = serde_json::to_string_pretty(value).map_err(|e| Failure::usage(e.to_string()))?;
            println!("{doc}");
        }
        Format::Table => print!("{}", table()),
    }
    Ok(())
}
