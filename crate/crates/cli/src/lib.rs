//! Experiment harness: configuration, seeded trial execution, aggregation and
//! JSON/CSV output for the `memlab` binary.

pub mod config;
pub mod experiments;
pub mod report;
pub mod sweep;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Experiment(_) => 3,
        }
    }
}
