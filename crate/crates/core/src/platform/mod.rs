//! Heterogeneous multicore model: sockets with shared caches, resilient and
//! non-resilient cores, IPI latencies, replica placement, and the cycle
//! ledger every run is charged against.

mod adaptive;
mod cost;
mod placement;
mod topology;

pub use adaptive::{adapt_placement, AdaptiveConfig, AdaptiveMonitor};
pub use cost::{
    colocated_pressure, contention_fraction, event_cost, notification_cost, segment_cost,
    CostLedger, CostParams, EventCost, Notification, NotificationMechanism, ReplicaCost,
    SegmentCost, SegmentSample,
};
pub use placement::{candidate_order, place, Placement, PlacementStrategy};
pub use topology::{Core, CoreId, CoreKind, Socket, Topology};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlatformError {
    #[error("need {needed} cores for replicas but only {available} are eligible")]
    InsufficientCores { needed: usize, available: usize },
    #[error("master core {0} is not a ResCore")]
    MasterNotResilient(CoreId),
    #[error("core {0} does not exist")]
    UnknownCore(CoreId),
    #[error("core {0} appears twice in the topology")]
    DuplicateCore(CoreId),
    #[error("core {0} may not host a replica")]
    IneligibleCore(CoreId),
    #[error("core {0} is assigned to more than one replica")]
    CoreShared(CoreId),
    #[error("{0}")]
    Config(String),
}

/// Everything about the machine a run needs beyond the replication policy.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlatformConfig {
    pub topology: Topology,
    pub costs: CostParams,
    pub placement: PlacementStrategy,
    pub adaptive: AdaptiveConfig,
    pub notification: Notification,
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<(), PlatformError> {
        self.costs.validate()?;
        self.notification.validate()?;
        if matches!(
            self.adaptive.initial,
            PlacementStrategy::Adaptive | PlacementStrategy::Pinned(_)
        ) {
            return Err(PlatformError::Config(format!(
                "adaptive.initial must be a static strategy, not {}",
                self.adaptive.initial
            )));
        }
        if let PlacementStrategy::Pinned(cores) = &self.placement {
            for &c in cores {
                if !self.topology.eligible(c) {
                    return Err(PlatformError::IneligibleCore(c));
                }
            }
        }
        Ok(())
    }
}
