use std::fmt;
use std::path::PathBuf;

use crate::engine::SimResult;
use crate::topology::CoreId;

/// A single problem found while parsing or validating a scenario.
///
/// `line` is 1-based; 0 means the problem is not tied to a specific line
/// (e.g. a required key that never appeared).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl Diagnostic {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }

    pub fn global(message: impl Into<String>) -> Self {
        Self::new(0, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid core {core}: topology has {total} logical cores")]
    InvalidCore { core: CoreId, total: usize },

    #[error("invalid demand: {field}={value} is outside [0,3]")]
    InvalidDemand { field: &'static str, value: u64 },

    #[error("malformed register image {0:#018x}: reserved bits 63..36 are set")]
    MalformedRegister(u64),

    #[error("invalid action code {0:#04b}")]
    InvalidAction(u8),

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("policy violation: {0}")]
    PolicyViolation(String),

    #[error("core state error: {0}")]
    State(String),

    #[error("scenario invalid:\n{}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),

    #[error("cycle budget of {budget} exhausted with {unfinished} process(es) unfinished")]
    Deadline {
        budget: u64,
        unfinished: usize,
        partial: Box<SimResult>,
    },

    #[error("secret key is empty")]
    EmptyKey,

    #[error("insufficient trace: {windows} window(s) recorded, {expected} bit(s) expected")]
    InsufficientTrace { windows: usize, expected: usize },

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Validation-class errors are the caller's fault (bad input); everything
    /// else is a runtime failure. The CLI maps these to exit codes 1 and 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::InvalidCore { .. }
                | Error::InvalidDemand { .. }
                | Error::MalformedRegister(_)
                | Error::InvalidAction(_)
                | Error::InvalidTopology(_)
                | Error::EmptyKey
                | Error::Config(_)
        )
    }
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
