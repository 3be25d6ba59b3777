use std::path::{Path, PathBuf};

use consel_core::Error;
use serde::Serialize;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MISSING_INPUT: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    MissingInput { flag: &'static str, path: PathBuf },
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// The JSON object written to stderr on failure.
#[derive(Serialize)]
struct Report<'a> {
    error: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flag: Option<&'a str>,
    exit_code: i32,
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::MissingInput { .. } => EXIT_MISSING_INPUT,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Core(e) => match e {
                Error::Io { .. } => EXIT_MISSING_INPUT,
                Error::InvalidArgument(_) | Error::BudgetTooLarge { .. } => EXIT_USAGE,
                Error::NonFinite(_) | Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_INVARIANT,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let code = self.exit_code();
        let report = match self {
            Failure::MissingInput { flag, path } => Report {
                error: "missing-input",
                message: format!("--{flag}: {} does not exist", path.display()),
                path: Some(path),
                flag: Some(flag),
                exit_code: code,
            },
            Failure::Usage(msg) => Report {
                error: "usage",
                message: msg.clone(),
                path: None,
                flag: None,
                exit_code: code,
            },
            Failure::Core(e) => Report {
                error: e.kind(),
                message: e.to_string(),
                path: match e {
                    Error::Io { path, .. } | Error::Malformed { path, .. } => Some(path),
                    _ => None,
                },
                flag: None,
                exit_code: code,
            },
        };
        serde_json::to_string(&report).expect("plain strings serialize")
    }
}
