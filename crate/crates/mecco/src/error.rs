//! Crate-wide error type and exit-code mapping.

use crate::model::Constraint;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Configuration file or flag rejected. `line` is 1-based when the
    /// failure maps to a config file line.
    #[error("config error{}: {message}", fmt_line(.line))]
    Config { line: Option<usize>, message: String },

    /// A numeric argument outside the domain of a model formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// An allocation plan violated one of the optimization constraints.
    #[error("plan violates {0}")]
    Constraint(Constraint),

    /// A plan exceeded a task deadline while deadline enforcement is on.
    #[error("device {device} misses its deadline: latency {latency_s}s > {deadline_s}s")]
    Deadline {
        device: usize,
        latency_s: f64,
        deadline_s: f64,
    },

    /// Scenario or problem size rejected before any work started
    /// (for example more devices than bandwidth quanta, or an oracle
    /// enumeration that would exceed its size guard).
    #[error("admission error: {0}")]
    Admission(String),

    /// A ledger mutation attempted by a key other than the table admin.
    #[error("unauthorized: {0}")]
    Unauthorized(String),

    /// Persisted bytes (ledger file, model file) failed to decode.
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },

    /// Training diverged or produced non-finite numbers.
    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Domain(_) | Error::Decode { .. } => 2,
            Error::Admission(_)
            | Error::Constraint(_)
            | Error::Deadline { .. }
            | Error::Unauthorized(_) => 3,
            Error::Training(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

fn fmt_line(line: &Option<usize>) -> String {
    match line {
        Some(n) => format!(" (line {n})"),
        None => String::new(),
    }
}
