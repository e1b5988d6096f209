use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a model precondition.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scenario, grid or candidate file failed validation.
    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    /// The model reached a state it should never reach. Aborts the run.
    #[error("logic error: {0}")]
    Logic(String),

    /// A handler failed while dispatching an event.
    #[error("event {event} at t={time} h: {source}")]
    Event {
        time: f64,
        event: String,
        #[source]
        source: Box<Error>,
    },

    /// A replicated run failed; the seed reproduces it.
    #[error("run {run_index} (seed {seed:#018x}) failed: {source}")]
    Run {
        run_index: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn logic(msg: impl Into<String>) -> Self {
        Error::Logic(msg.into())
    }

    /// True for errors caused by user input rather than by the model at runtime.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Validation { .. } | Error::Serde(_) => true,
            Error::Run { source, .. } | Error::Event { source, .. } => source.is_user_error(),
            Error::Logic(_) | Error::Io { .. } => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
