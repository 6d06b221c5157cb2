//! Crate-wide error types.

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by generation backends.
#[derive(Debug, Error)]
pub enum BackendError {
    /// Transport-level failure that survived the retry budget.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    /// Authentication rejected by the endpoint; never retried.
    #[error("authentication failed: {0}")]
    Auth(String),

    /// The endpoint answered but the payload could not be interpreted.
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    /// Request violated a backend precondition (bad params, missing route).
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset error in {path} line {line}: {message}")]
    Dataset {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Backend(#[from] BackendError),

    /// Backend failure annotated with the trial it interrupted.
    #[error("trial failed for question {question_id} draw {draw_index}: {source}")]
    Trial {
        question_id: String,
        draw_index: u64,
        #[source]
        source: BackendError,
    },

    #[error("store error in {path}: {message}")]
    Store { path: PathBuf, message: String },

    /// Malformed store lines, reported with their line numbers.
    #[error("malformed store lines in {path}: {}", format_bad_lines(.lines))]
    MalformedStore {
        path: PathBuf,
        /// (line number, parse error) pairs.
        lines: Vec<(usize, String)>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A prerequisite artifact is missing; the message names the command
    /// that produces it.
    #[error("{0}")]
    MissingPrerequisite(String),
}

fn format_bad_lines(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .map(|(n, e)| format!("line {n}: {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
