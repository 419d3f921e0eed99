//! The replication master: resumes replicas, votes on their events,
//! recovers minorities, proxies I/O once and scales the replica count.

mod engine;
mod report;
mod vote;
mod world;

pub use engine::{run_native, run_replicated};
pub use report::{HangReason, RunReport, Termination, TraceEntry};
pub use vote::{compare_and_vote, Verdict, VoteResult};
pub use world::{ExternalWorld, OutputRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faults::FaultError;
use crate::memory::DEFAULT_DRAIN_BUDGET;
use crate::platform::PlatformError;

/// Replicas needed to outvote `f` simultaneous faulty ones.
pub fn required_replicas(f: usize) -> usize {
    2 * f + 1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakeupMode {
    /// Copy every page of the source replica.
    #[default]
    Eager,
    /// Share the source's backings copy-on-write.
    Cow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmrPolicy {
    /// A two-way split ends the run as detected but unrecoverable.
    #[default]
    HaltOnMismatch,
}

/// Order in which replicas are resumed within a round. Results must not
/// depend on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResumeOrder {
    #[default]
    Ascending,
    Descending,
    /// Ascending, rotated left by this many positions.
    Rotate(usize),
}

impl ResumeOrder {
    pub fn arrange<T>(self, items: &mut [T]) {
        match self {
            ResumeOrder::Ascending => {}
            ResumeOrder::Descending => items.reverse(),
            ResumeOrder::Rotate(k) if !items.is_empty() => items.rotate_left(k % items.len()),
            ResumeOrder::Rotate(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationConfig {
    pub n_initial: usize,
    /// Tolerated simultaneous replica faults; fixes `n_initial` to 2f+1.
    pub f_target: Option<usize>,
    /// Cap on replicas, awake or asleep. Defaults to `n_initial`.
    pub max_replicas: Option<usize>,
    pub wakeup_mode: WakeupMode,
    pub dmr_policy: DmrPolicy,
    /// Instructions a replica may run in one segment before it is
    /// considered hung.
    pub permanent_fault_timeout: u64,
    /// Events after which the run is declared hung.
    pub event_cap: u64,
    pub ecc_memory: bool,
    /// Backings released per event boundary.
    pub drain_budget: usize,
    /// Act on the program's scaling hints.
    pub honor_hints: bool,
    pub resume_order: ResumeOrder,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        Self {
            n_initial: 3,
            f_target: None,
            max_replicas: None,
            wakeup_mode: WakeupMode::Eager,
            dmr_policy: DmrPolicy::HaltOnMismatch,
            permanent_fault_timeout: 100_000_000,
            event_cap: 1_000_000,
            ecc_memory: false,
            drain_budget: DEFAULT_DRAIN_BUDGET,
            honor_hints: true,
            resume_order: ResumeOrder::Ascending,
        }
    }
}

impl ReplicationConfig {
    pub fn with_replicas(n: usize) -> Self {
        Self {
            n_initial: n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.n_initial == 0 {
            return bad("n_initial must be at least 1".into());
        }
        if let Some(f) = self.f_target {
            if self.n_initial != required_replicas(f) {
                return bad(format!(
                    "f_target {f} needs n_initial {} but got {}",
                    required_replicas(f),
                    self.n_initial
                ));
            }
        }
        if let Some(max) = self.max_replicas {
            if max < self.n_initial {
                return bad(format!(
                    "max_replicas {max} is below n_initial {}",
                    self.n_initial
                ));
            }
        }
        if self.permanent_fault_timeout == 0 {
            return bad("permanent_fault_timeout must be positive".into());
        }
        if self.event_cap == 0 {
            return bad("event_cap must be positive".into());
        }
        if self.drain_budget == 0 {
            return bad("drain_budget must be positive".into());
        }
        Ok(())
    }

    pub fn max_replicas(&self) -> usize {
        self.max_replicas.unwrap_or(self.n_initial)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("invalid replication config: {0}")]
    Config(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error("invalid fault: {0}")]
    Fault(#[from] FaultError),
}
