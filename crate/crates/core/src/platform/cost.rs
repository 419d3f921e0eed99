use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Placement, PlatformError, Topology};
use crate::memory::{ReplicaId, PAGE_SIZE};
use crate::vm::SegmentStats;

/// Cycle costs of the platform model. Every field can be overridden in a
/// scenario's `[costs]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Measured IPI latency between cores of one socket.
    pub ipi_intra_cycles: u64,
    /// Measured IPI latency across sockets.
    pub ipi_inter_cycles: u64,
    pub cpi: u64,
    pub llc_miss_penalty_cycles: u64,
    pub compare_cost_per_replica: u64,
    pub migration_cost_cycles: u64,
    pub state_copy_cost_cycles: u64,
    pub poll_check_cost_cycles: u64,
    pub proxy_base_cost: u64,
    /// Copying one page during recovery, eager wake-up or privatization.
    pub page_copy_cost_cycles: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            ipi_intra_cycles: 5_900,
            ipi_inter_cycles: 14_300,
            cpi: 1,
            llc_miss_penalty_cycles: 200,
            compare_cost_per_replica: 300,
            migration_cost_cycles: 16_000,
            state_copy_cost_cycles: 1_000,
            poll_check_cost_cycles: 200,
            proxy_base_cost: 2_000,
            page_copy_cost_cycles: 512,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), PlatformError> {
        if self.ipi_inter_cycles < self.ipi_intra_cycles {
            return Err(PlatformError::Config(format!(
                "ipi_inter_cycles ({}) must not be below ipi_intra_cycles ({})",
                self.ipi_inter_cycles, self.ipi_intra_cycles
            )));
        }
        Ok(())
    }

    /// IPI latency between two cores.
    pub fn ipi(&self, topology: &Topology, a: super::CoreId, b: super::CoreId) -> u64 {
        if topology.same_socket(a, b) {
            self.ipi_intra_cycles
        } else {
            self.ipi_inter_cycles
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotificationMechanism {
    /// Move the replica to the master's core and back.
    Migration,
    /// Per-replica helper receives the state by synchronous IPI message.
    SyncMessage,
    /// Helper polls a shared-memory channel; no IPI.
    SharedPolling,
}

impl NotificationMechanism {
    pub fn label(self) -> &'static str {
        match self {
            NotificationMechanism::Migration => "migration",
            NotificationMechanism::SyncMessage => "sync_message",
            NotificationMechanism::SharedPolling => "shared_polling",
        }
    }
}

impl fmt::Display for NotificationMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How replicas hand their state to the master at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub mechanism: NotificationMechanism,
    /// A shared-memory channel between replica and master cores exists.
    pub shared_channel: bool,
}

impl Default for Notification {
    fn default() -> Self {
        Self {
            mechanism: NotificationMechanism::SyncMessage,
            shared_channel: false,
        }
    }
}

impl Notification {
    pub fn new(mechanism: NotificationMechanism) -> Self {
        Self {
            mechanism,
            shared_channel: mechanism == NotificationMechanism::SharedPolling,
        }
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        if self.mechanism == NotificationMechanism::SharedPolling && !self.shared_channel {
            return Err(PlatformError::Config(
                "shared_polling requires a shared channel".into(),
            ));
        }
        Ok(())
    }
}

/// Cycles by category. The total is always the sum of the categories.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub execution: u64,
    pub llc_miss: u64,
    pub notification: u64,
    pub compare: u64,
    pub proxy: u64,
    /// Replica management: scaling, recovery, privatization, migration.
    pub scaling: u64,
}

impl CostLedger {
    pub const CATEGORIES: [&'static str; 6] = [
        "execution",
        "llc_miss",
        "notification",
        "compare",
        "proxy",
        "scaling",
    ];

    pub fn total(&self) -> u64 {
        self.categories().iter().sum()
    }

    pub fn categories(&self) -> [u64; 6] {
        [
            self.execution,
            self.llc_miss,
            self.notification,
            self.compare,
            self.proxy,
            self.scaling,
        ]
    }

    pub fn charge_segment(&mut self, cost: &SegmentCost) {
        self.execution += cost.execution;
        self.llc_miss += cost.llc_miss;
    }

    pub fn charge_event(&mut self, cost: &EventCost) {
        self.notification += cost.notification;
        self.compare += cost.compare;
        self.proxy += cost.proxy;
    }

    pub fn charge_scaling(&mut self, cycles: u64) {
        self.scaling += cycles;
    }

    /// Event-handling share: notification + compare + proxy.
    pub fn interception(&self) -> u64 {
        self.notification + self.compare + self.proxy
    }
}

/// One replica's contribution to a segment, as seen by the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSample {
    pub replica: ReplicaId,
    pub instructions: u64,
    pub accesses: u64,
    pub touched_pages: u32,
}

impl SegmentSample {
    pub fn new(replica: ReplicaId, stats: &SegmentStats) -> Self {
        Self {
            replica,
            instructions: stats.instructions,
            accesses: stats.access.accesses,
            touched_pages: stats.touched_pages(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaCost {
    pub replica: ReplicaId,
    pub cycles: u64,
    pub misses: u64,
    /// Misses beyond the cold touch of each page.
    pub contention_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentCost {
    /// Replicas run in parallel; the slowest one sets the pace.
    pub wall_cycles: u64,
    pub execution: u64,
    pub llc_miss: u64,
    pub replicas: Vec<ReplicaCost>,
}

/// Fraction of accesses that miss because the bytes resident on a socket
/// exceed its last-level cache.
pub fn contention_fraction(resident_bytes: u64, capacity: u64) -> f64 {
    if resident_bytes <= capacity {
        0.0
    } else {
        (resident_bytes - capacity) as f64 / resident_bytes as f64
    }
}

/// Charges one parallel segment. Per socket the working sets of all
/// replicas placed there compete for the shared cache; each replica pays a
/// cold miss per touched page plus its share of contention misses.
pub fn segment_cost(
    samples: &[SegmentSample],
    placement: &Placement,
    topology: &Topology,
    params: &CostParams,
) -> SegmentCost {
    let socket_of = |r: ReplicaId| {
        placement
            .core_of(r)
            .and_then(|c| topology.socket_index(c))
            .unwrap_or_else(|| panic!("{r} is not placed"))
    };
    let mut resident = vec![0u64; topology.sockets().len()];
    for s in samples {
        resident[socket_of(s.replica)] += s.touched_pages as u64 * PAGE_SIZE as u64;
    }
    let fraction: Vec<f64> = topology
        .sockets()
        .iter()
        .zip(&resident)
        .map(|(socket, &w)| contention_fraction(w, socket.llc_capacity_bytes))
        .collect();

    let mut sorted: Vec<_> = samples.to_vec();
    sorted.sort_by_key(|s| s.replica);
    let mut out = SegmentCost {
        wall_cycles: 0,
        execution: 0,
        llc_miss: 0,
        replicas: Vec::with_capacity(sorted.len()),
    };
    for s in &sorted {
        let c = fraction[socket_of(s.replica)];
        let contention = (s.accesses as f64 * c).round() as u64;
        let misses = s.touched_pages as u64 + contention;
        let exec = s.instructions * params.cpi;
        let miss = misses * params.llc_miss_penalty_cycles;
        let cycles = exec + miss;
        out.replicas.push(ReplicaCost {
            replica: s.replica,
            cycles,
            misses,
            contention_misses: contention,
        });
        if cycles > out.wall_cycles || out.replicas.len() == 1 {
            out.wall_cycles = cycles;
            out.execution = exec;
            out.llc_miss = miss;
        }
    }
    out
}

/// Contention misses and accesses the samples would see if all replicas
/// shared the master socket's cache. Placement-independent, so the
/// adaptive monitor reads the same signal whichever layout is active.
pub fn colocated_pressure(samples: &[SegmentSample], topology: &Topology) -> (u64, u64) {
    let home = topology.socket_index(topology.master_core()).unwrap_or(0);
    let capacity = topology.sockets()[home].llc_capacity_bytes;
    let resident: u64 = samples
        .iter()
        .map(|s| s.touched_pages as u64 * PAGE_SIZE as u64)
        .sum();
    let c = contention_fraction(resident, capacity);
    let misses = samples
        .iter()
        .map(|s| (s.accesses as f64 * c).round() as u64)
        .sum();
    let accesses = samples.iter().map(|s| s.accesses).sum();
    (misses, accesses)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EventCost {
    pub notification: u64,
    pub compare: u64,
    pub proxy: u64,
}

impl EventCost {
    pub fn total(&self) -> u64 {
        self.notification + self.compare + self.proxy
    }
}

/// Cost of one replica handing its state to the master.
pub fn notification_cost(
    replica: ReplicaId,
    placement: &Placement,
    notification: &Notification,
    params: &CostParams,
    topology: &Topology,
) -> u64 {
    match notification.mechanism {
        NotificationMechanism::SyncMessage => {
            let core = placement
                .core_of(replica)
                .unwrap_or_else(|| panic!("{replica} is not placed"));
            2 * params.ipi(topology, core, topology.master_core()) + params.state_copy_cost_cycles
        }
        NotificationMechanism::Migration => 2 * params.migration_cost_cycles,
        NotificationMechanism::SharedPolling => {
            params.poll_check_cost_cycles + params.state_copy_cost_cycles
        }
    }
}

/// Cost of handling one externalization event for `replicas`.
pub fn event_cost(
    replicas: &[ReplicaId],
    placement: &Placement,
    notification: &Notification,
    params: &CostParams,
    topology: &Topology,
) -> Result<EventCost, PlatformError> {
    notification.validate()?;
    let notify = replicas
        .iter()
        .map(|&r| notification_cost(r, placement, notification, params, topology))
        .sum();
    Ok(EventCost {
        notification: notify,
        compare: replicas.len() as u64 * params.compare_cost_per_replica,
        proxy: params.proxy_base_cost,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::platform::{place, CoreId, PlacementStrategy};

    fn ids(n: u32) -> Vec<ReplicaId> {
        (0..n).map(ReplicaId).collect()
    }

    fn placed(strategy: PlacementStrategy, n: u32) -> (Placement, Topology) {
        let t = Topology::default();
        (place(&strategy, &ids(n), &t, &BTreeSet::new()).unwrap(), t)
    }

    fn sample(r: u32, instructions: u64, accesses: u64, touched: u32) -> SegmentSample {
        SegmentSample {
            replica: ReplicaId(r),
            instructions,
            accesses,
            touched_pages: touched,
        }
    }

    #[test]
    fn segment_under_capacity() {
        let (p, t) = placed(PlacementStrategy::SameSocket, 3);
        let samples: Vec<_> = (0..3).map(|r| sample(r, 1_000, 50, 10)).collect();
        let cost = segment_cost(&samples, &p, &t, &CostParams::default());
        assert_eq!(cost.wall_cycles, 1_000 + 10 * 200);
        assert_eq!(cost.execution, 1_000);
        assert_eq!(cost.llc_miss, 2_000);
    }

    #[test]
    fn segment_at_twice_capacity() {
        let mut t = Topology::default();
        // 3 replicas × 10 pages = 30 pages resident; capacity 15 pages → c = 0.5.
        t = Topology::uniform(2, 6, 15 * PAGE_SIZE as u64, t.master_core()).unwrap();
        let p = place(
            &PlacementStrategy::SameSocket,
            &ids(3),
            &t,
            &BTreeSet::new(),
        )
        .unwrap();
        let samples: Vec<_> = (0..3).map(|r| sample(r, 1_000, 400, 10)).collect();
        let cost = segment_cost(&samples, &p, &t, &CostParams::default());
        for rc in &cost.replicas {
            assert_eq!(rc.misses, 10 + 200);
        }
    }

    #[test]
    fn sync_message_costs() {
        let params = CostParams::default();
        let n = Notification::default();
        let (p, t) = placed(PlacementStrategy::Pinned(vec![CoreId(1), CoreId(7)]), 2);
        assert_eq!(notification_cost(ReplicaId(0), &p, &n, &params, &t), 12_800);
        assert_eq!(notification_cost(ReplicaId(1), &p, &n, &params, &t), 29_600);
    }

    #[test]
    fn mechanism_ordering_holds_for_every_core() {
        let params = CostParams::default();
        let t = Topology::default();
        for core in 1..12 {
            let p = place(
                &PlacementStrategy::Pinned(vec![CoreId(core)]),
                &ids(1),
                &t,
                &BTreeSet::new(),
            )
            .unwrap();
            let c = |m| notification_cost(ReplicaId(0), &p, &Notification::new(m), &params, &t);
            assert!(
                c(NotificationMechanism::SharedPolling) < c(NotificationMechanism::SyncMessage)
            );
            assert!(c(NotificationMechanism::SyncMessage) < c(NotificationMechanism::Migration));
        }
    }

    #[test]
    fn polling_without_channel_is_config_error() {
        let (p, t) = placed(PlacementStrategy::SameSocket, 1);
        let n = Notification {
            mechanism: NotificationMechanism::SharedPolling,
            shared_channel: false,
        };
        assert!(matches!(
            event_cost(&ids(1), &p, &n, &CostParams::default(), &t),
            Err(PlatformError::Config(_))
        ));
    }

    #[test]
    fn event_total() {
        let (p, t) = placed(PlacementStrategy::SameSocket, 3);
        let c = event_cost(
            &ids(3),
            &p,
            &Notification::default(),
            &CostParams::default(),
            &t,
        )
        .unwrap();
        assert_eq!(c.notification, 3 * 12_800);
        assert_eq!(c.compare, 900);
        assert_eq!(c.proxy, 2_000);
        assert_eq!(c.total(), 41_300);
    }

    #[test]
    fn ledger_total_is_sum() {
        let mut l = CostLedger::default();
        l.charge_event(&EventCost {
            notification: 5,
            compare: 7,
            proxy: 11,
        });
        l.charge_scaling(13);
        assert_eq!(l.total(), 36);
        assert_eq!(l.interception(), 23);
    }
}
