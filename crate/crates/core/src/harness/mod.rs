//! Scenario-driven harness: synth, detect, localize, track, eval.

pub mod celldb;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod scenario;
pub mod trace;

use thiserror::Error;

use crate::amplitude::AmplitudeError;
use crate::channel::ChannelError;
use crate::detect::DetectError;
use crate::route::RouteError;

pub use report::{cmd_detect, cmd_eval, cmd_localize, cmd_synth, cmd_track, run_eval, RunReport};
pub use scenario::Scenario;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad input: schema, syntax, or geometry.
    #[error("{context}: {msg}")]
    Validation { context: String, msg: String },
    /// Input parsed but cannot be processed.
    #[error("{context}: {msg}")]
    Data { context: String, msg: String },
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for validation errors, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation { .. } => 2,
            _ => 3,
        }
    }
}

impl From<ChannelError> for HarnessError {
    fn from(e: ChannelError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<AmplitudeError> for HarnessError {
    fn from(e: AmplitudeError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<DetectError> for HarnessError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Io(e) => HarnessError::Io(e),
            other => HarnessError::Data {
                context: "detect".into(),
                msg: other.to_string(),
            },
        }
    }
}

impl From<RouteError> for HarnessError {
    fn from(e: RouteError) -> Self {
        match e {
            RouteError::Io(e) => HarnessError::Io(e),
            other => HarnessError::Validation {
                context: "route".into(),
                msg: other.to_string(),
            },
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Runtime(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Runtime(format!("json: {e}"))
    }
}
