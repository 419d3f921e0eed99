//! Scenario files, the `run`/`campaign`/`sweep` commands and their reports.

mod commands;
mod par;
mod report;
mod scenario;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{cmd_campaign, cmd_run, cmd_sweep, golden_run, Options};
pub use par::{map_indexed, Execution, PARALLEL_ENABLED};
pub use report::{geometric_mean, round_sig, Format, Report, ReportRow, RowKind, CSV_HEADER};
pub use scenario::{
    apply_point, NotificationSection, PlacementSection, ReportSection, Scenario, ScenarioFile,
    Sweep, SweepAxis, SweepPoint, SweepSection, SweepValue, TopologySection, Workload,
    WorkloadSection,
};

use crate::master::RunError;
use crate::platform::PlatformError;
use crate::vm::ParseError;

/// A scenario that cannot be run as written.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario syntax: {0}")]
    Parse(String),
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("workload {workload}: {error}")]
    Assemble { workload: String, error: ParseError },
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
    #[error("campaign planning failed: {0}")]
    Plan(String),
    #[error("writing {}: {source}", path.display())]
    Emit {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ExperimentError {
    /// Process exit status: 1 for configuration errors, 2 for everything
    /// that goes wrong afterwards.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Scenario(_) => 1,
            _ => 2,
        }
    }
}
