use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CoreId, PlatformError, Topology};
use crate::memory::ReplicaId;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStrategy {
    /// Ascending core ids, ignoring sockets.
    #[default]
    Sequential,
    /// Fill the master's socket first.
    SameSocket,
    /// Round-robin over sockets.
    CrossSocket,
    /// Start on one socket and move according to observed cache pressure.
    Adaptive,
    /// Replica `i` on the `i`-th listed core.
    Pinned(Vec<CoreId>),
}

impl PlacementStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            PlacementStrategy::Sequential => "sequential",
            PlacementStrategy::SameSocket => "same_socket",
            PlacementStrategy::CrossSocket => "cross_socket",
            PlacementStrategy::Adaptive => "adaptive",
            PlacementStrategy::Pinned(_) => "pinned",
        }
    }
}

impl fmt::Display for PlacementStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Which core each replica runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub strategy: PlacementStrategy,
    assignment: BTreeMap<ReplicaId, CoreId>,
}

impl Placement {
    pub fn core_of(&self, replica: ReplicaId) -> Option<CoreId> {
        self.assignment.get(&replica).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<ReplicaId, CoreId> {
        &self.assignment
    }

    pub fn used_cores(&self) -> BTreeSet<CoreId> {
        self.assignment.values().copied().collect()
    }

    pub fn assign(&mut self, replica: ReplicaId, core: CoreId) {
        debug_assert!(!self.assignment.values().any(|&c| c == core));
        self.assignment.insert(replica, core);
    }

    pub fn unassign(&mut self, replica: ReplicaId) -> Option<CoreId> {
        self.assignment.remove(&replica)
    }

    /// Replicas whose core differs between `self` and `other`.
    pub fn moved(&self, other: &Placement) -> usize {
        self.assignment
            .iter()
            .filter(|(r, c)| other.core_of(**r) != Some(**c))
            .count()
    }

    pub fn validate(&self, topology: &Topology) -> Result<(), PlatformError> {
        let mut seen = BTreeSet::new();
        for &core in self.assignment.values() {
            if !topology.eligible(core) {
                return Err(PlatformError::IneligibleCore(core));
            }
            if !seen.insert(core) {
                return Err(PlatformError::CoreShared(core));
            }
        }
        Ok(())
    }
}

/// Cores in the order `strategy` would fill them, skipping ineligible and
/// `excluded` ones.
pub fn candidate_order(
    strategy: &PlacementStrategy,
    topology: &Topology,
    excluded: &BTreeSet<CoreId>,
) -> Vec<CoreId> {
    let usable = |c: CoreId| topology.eligible(c) && !excluded.contains(&c);
    let per_socket: Vec<Vec<CoreId>> = topology
        .sockets()
        .iter()
        .map(|s| {
            let mut ids: Vec<_> = s
                .cores
                .iter()
                .map(|c| c.id)
                .filter(|&c| usable(c))
                .collect();
            ids.sort();
            ids
        })
        .collect();
    match strategy {
        PlacementStrategy::Sequential => {
            let mut all: Vec<_> = per_socket.into_iter().flatten().collect();
            all.sort();
            all
        }
        PlacementStrategy::SameSocket | PlacementStrategy::Adaptive => {
            let home = topology.socket_index(topology.master_core()).unwrap_or(0);
            let mut order = per_socket[home].clone();
            for (i, cores) in per_socket.iter().enumerate() {
                if i != home {
                    order.extend(cores);
                }
            }
            order
        }
        PlacementStrategy::CrossSocket => {
            let depth = per_socket.iter().map(Vec::len).max().unwrap_or(0);
            (0..depth)
                .flat_map(|i| per_socket.iter().filter_map(move |s| s.get(i).copied()))
                .collect()
        }
        PlacementStrategy::Pinned(cores) => cores.iter().copied().filter(|&c| usable(c)).collect(),
    }
}

/// Assigns `replicas`, in order, to cores following `strategy`.
pub fn place(
    strategy: &PlacementStrategy,
    replicas: &[ReplicaId],
    topology: &Topology,
    excluded: &BTreeSet<CoreId>,
) -> Result<Placement, PlatformError> {
    if let PlacementStrategy::Pinned(cores) = strategy {
        if cores.len() < replicas.len() {
            return Err(PlatformError::InsufficientCores {
                needed: replicas.len(),
                available: cores.len(),
            });
        }
        let placement = Placement {
            strategy: strategy.clone(),
            assignment: replicas
                .iter()
                .copied()
                .zip(cores.iter().copied())
                .collect(),
        };
        placement.validate(topology)?;
        return Ok(placement);
    }
    let order = candidate_order(strategy, topology, excluded);
    if order.len() < replicas.len() {
        return Err(PlatformError::InsufficientCores {
            needed: replicas.len(),
            available: order.len(),
        });
    }
    Ok(Placement {
        strategy: strategy.clone(),
        assignment: replicas.iter().copied().zip(order).collect(),
    })
}
