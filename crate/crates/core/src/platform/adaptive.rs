//! Runtime placement adaptation driven by last-level cache pressure.
//!
//! Communication-bound programs want every replica next to the master to
//! keep IPIs on-socket; cache-bound ones want to spread out so each socket's
//! cache holds fewer working sets. The monitor accumulates contention over a
//! window of events and picks a side when the window closes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cost::{colocated_pressure, SegmentSample};
use super::{place, CoreId, Placement, PlacementStrategy, PlatformError, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub window_events: u64,
    /// A window also closes once this many instructions ran in it.
    pub window_instructions: u64,
    pub miss_threshold: f64,
    /// Layout used before the first decision.
    pub initial: PlacementStrategy,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            window_events: 64,
            window_instructions: 1_000_000,
            miss_threshold: 0.05,
            initial: PlacementStrategy::SameSocket,
        }
    }
}

/// Picks SameSocket or CrossSocket from a window's miss fraction and
/// re-places the same replicas accordingly. Returns the current placement
/// unchanged when it already follows the chosen strategy.
pub fn adapt_placement(
    miss_fraction: f64,
    current: &Placement,
    threshold: f64,
    topology: &Topology,
    excluded: &BTreeSet<CoreId>,
) -> Result<Placement, PlatformError> {
    let target = if miss_fraction > threshold {
        PlacementStrategy::CrossSocket
    } else {
        PlacementStrategy::SameSocket
    };
    if current.strategy == target {
        return Ok(current.clone());
    }
    let replicas: Vec<_> = current.assignment().keys().copied().collect();
    place(&target, &replicas, topology, excluded)
}

#[derive(Debug, Clone)]
pub struct AdaptiveMonitor {
    config: AdaptiveConfig,
    events: u64,
    instructions: u64,
    contention_misses: u64,
    accesses: u64,
    /// The previous window switched; this one may not.
    cooling: bool,
}

impl AdaptiveMonitor {
    pub fn new(config: AdaptiveConfig) -> Self {
        Self {
            config,
            events: 0,
            instructions: 0,
            contention_misses: 0,
            accesses: 0,
            cooling: false,
        }
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.config
    }

    /// Records one segment and its event.
    pub fn observe(&mut self, samples: &[SegmentSample], topology: &Topology) {
        let (misses, accesses) = colocated_pressure(samples, topology);
        self.contention_misses += misses;
        self.accesses += accesses;
        self.instructions += samples.iter().map(|s| s.instructions).max().unwrap_or(0);
        self.events += 1;
    }

    pub fn miss_fraction(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.contention_misses as f64 / self.accesses as f64
        }
    }

    /// At an event boundary: if the window is complete, decide and reset.
    /// Returns a new placement when the decision moves replicas.
    pub fn end_of_event(
        &mut self,
        current: &Placement,
        topology: &Topology,
        excluded: &BTreeSet<CoreId>,
    ) -> Result<Option<Placement>, PlatformError> {
        if self.events < self.config.window_events
            && self.instructions < self.config.window_instructions
        {
            return Ok(None);
        }
        let fraction = self.miss_fraction();
        self.events = 0;
        self.instructions = 0;
        self.contention_misses = 0;
        self.accesses = 0;
        if self.cooling {
            self.cooling = false;
            return Ok(None);
        }
        let next = adapt_placement(
            fraction,
            current,
            self.config.miss_threshold,
            topology,
            excluded,
        )?;
        if next.strategy == current.strategy {
            return Ok(None);
        }
        self.cooling = true;
        Ok(Some(next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::ReplicaId;

    fn ids(n: u32) -> Vec<ReplicaId> {
        (0..n).map(ReplicaId).collect()
    }

    #[test]
    fn threshold_picks_side() {
        let t = Topology::default();
        let none = BTreeSet::new();
        let same = place(&PlacementStrategy::SameSocket, &ids(3), &t, &none).unwrap();
        let to_cross = adapt_placement(0.3, &same, 0.05, &t, &none).unwrap();
        assert_eq!(to_cross.strategy, PlacementStrategy::CrossSocket);
        assert_eq!(to_cross.moved(&same), 2);
        assert_eq!(adapt_placement(0.05, &same, 0.05, &t, &none).unwrap(), same);
        let back = adapt_placement(0.0, &to_cross, 0.05, &t, &none).unwrap();
        assert_eq!(back, same);
    }

    #[test]
    fn window_and_hysteresis() {
        let t = Topology::default();
        let none = BTreeSet::new();
        let cfg = AdaptiveConfig {
            window_events: 2,
            ..Default::default()
        };
        let mut m = AdaptiveMonitor::new(cfg);
        let mut cur = place(&PlacementStrategy::CrossSocket, &ids(2), &t, &none).unwrap();
        let quiet = [SegmentSample {
            replica: ReplicaId(0),
            instructions: 10,
            accesses: 10,
            touched_pages: 1,
        }];
        m.observe(&quiet, &t);
        assert!(m.end_of_event(&cur, &t, &none).unwrap().is_none());
        m.observe(&quiet, &t);
        cur = m
            .end_of_event(&cur, &t, &none)
            .unwrap()
            .expect("switch to same socket");
        assert_eq!(cur.strategy, PlacementStrategy::SameSocket);

        // Heavy pressure right after a switch is ignored for one window.
        let heavy = [SegmentSample {
            replica: ReplicaId(0),
            instructions: 10,
            accesses: 1_000,
            touched_pages: 4_000,
        }];
        for _ in 0..2 {
            m.observe(&heavy, &t);
            assert!(m.end_of_event(&cur, &t, &none).unwrap().is_none());
        }
        m.observe(&heavy, &t);
        m.observe(&heavy, &t);
        let next = m.end_of_event(&cur, &t, &none).unwrap().unwrap();
        assert_eq!(next.strategy, PlacementStrategy::CrossSocket);
    }
}
