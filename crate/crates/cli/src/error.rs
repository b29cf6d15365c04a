use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, bad flags, unwritable output.
    #[error("{0}")]
    Config(String),
    /// The workload does not fit the cluster or an input file is malformed.
    #[error("{0}")]
    Validation(String),
    /// Job script errors, already rendered as `<file>:<line>: <Kind>` lines.
    #[error("{0}")]
    Parse(String),
    /// The simulation or its analysis broke an internal invariant.
    #[error("{0}")]
    Fault(String),
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    exit_code: i32,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Validation(_) | CliError::Parse(_) => 2,
            CliError::Fault(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Validation(_) => "validation",
            CliError::Parse(_) => "parse",
            CliError::Fault(_) => "fault",
        }
    }

    /// One-line JSON object for standard error.
    pub fn to_json(&self) -> String {
        let record = ErrorRecord { error: self.kind(), exit_code: self.exit_code(), message: self.to_string() };
        serde_json::to_string(&record).expect("error record serializes")
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
