use std::path::PathBuf;

use thiserror::Error;

use crate::sim::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown scenario `{0}` (expected s1, s2 or s3)")]
    UnknownScenario(String),
    #[error("invariant violated at {at}: {what}")]
    Invariant { at: SimTime, what: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl SimError {
    pub fn is_invariant(&self) -> bool {
        matches!(self, SimError::Invariant { .. })
    }
}
