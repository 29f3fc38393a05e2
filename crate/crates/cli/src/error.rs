//! Command failures tagged with their process exit code.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Validation,
    Config,
    Io,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 1,
            FailureKind::Config => 2,
            FailureKind::Io => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: FailureKind, error: impl Into<anyhow::Error>) -> Self {
        CliError { kind, error: error.into() }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        CliError { kind: FailureKind::Validation, error: anyhow::anyhow!("{msg}") }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Engine I/O errors and empty inputs are input failures; everything else
/// is a configuration problem.
impl From<sparseconv::Error> for CliError {
    fn from(e: sparseconv::Error) -> Self {
        let kind = match e {
            sparseconv::Error::Io(_) | sparseconv::Error::EmptyCloud => FailureKind::Io,
            _ => FailureKind::Config,
        };
        CliError::new(kind, e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        let kind = match e.chain().find_map(|c| c.downcast_ref::<sparseconv::Error>()) {
            Some(sparseconv::Error::Io(_) | sparseconv::Error::EmptyCloud) => FailureKind::Io,
            _ if e.chain().any(|c| c.is::<std::io::Error>()) => FailureKind::Io,
            _ => FailureKind::Config,
        };
        CliError { kind, error: e }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Force a failure kind onto any error.
pub trait Tag<T> {
    fn tag(self, kind: FailureKind) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for std::result::Result<T, E> {
    fn tag(self, kind: FailureKind) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e))
    }
}
