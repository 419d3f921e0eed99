use std::collections::BTreeSet;

use super::report::{HangReason, RunReport, Termination, TraceEntry};
use super::vote::{compare_and_vote, Verdict};
use super::world::ExternalWorld;
use super::{ReplicationConfig, RunError};
use crate::faults::{FaultDriver, FaultError, FaultSpec, FaultTarget, OutcomeClass};
use crate::memory::{MemFault, ReplicaGroup, ReplicaId, ReplicaStatus};
use crate::platform::{
    candidate_order, event_cost, place, segment_cost, AdaptiveMonitor, CoreId,
    NotificationMechanism, Placement, PlacementStrategy, PlatformConfig, SegmentSample,
};
use crate::vm::{run_segment, EventKind, ExternalizationEvent, Program, SegmentStats, TrapKind};

/// Runs `program` under replication until a voted exit, halt or crash, a
/// vote without majority, or a hang.
pub fn run_replicated(
    program: &Program,
    config: &ReplicationConfig,
    platform: &PlatformConfig,
    faults: &[FaultSpec],
    world: ExternalWorld,
) -> Result<RunReport, RunError> {
    config.validate()?;
    platform.validate()?;
    for f in faults {
        f.validate()?;
        if matches!(f.target, FaultTarget::ChannelBit { .. })
            && platform.notification.mechanism != NotificationMechanism::SharedPolling
        {
            return Err(FaultError::ChannelWithoutPolling.into());
        }
    }
    Engine::new(program, config, platform, faults, world, true)?.run()
}

/// The unprotected baseline: one replica, no interception costs, hints
/// ignored, no faults. Uses the watermark and event cap of `config`.
pub fn run_native(
    program: &Program,
    config: &ReplicationConfig,
    platform: &PlatformConfig,
    world: ExternalWorld,
) -> Result<RunReport, RunError> {
    let native = ReplicationConfig {
        n_initial: 1,
        f_target: None,
        max_replicas: None,
        honor_hints: false,
        ..config.clone()
    };
    native.validate()?;
    platform.validate()?;
    Engine::new(program, &native, platform, &[], world, false)?.run()
}

struct Engine<'a> {
    program: &'a Program,
    config: &'a ReplicationConfig,
    platform: &'a PlatformConfig,
    instrumented: bool,
    group: ReplicaGroup,
    placement: Placement,
    monitor: Option<AdaptiveMonitor>,
    driver: FaultDriver,
    world: ExternalWorld,
    report: RunReport,
}

impl<'a> Engine<'a> {
    fn new(
        program: &'a Program,
        config: &'a ReplicationConfig,
        platform: &'a PlatformConfig,
        faults: &[FaultSpec],
        world: ExternalWorld,
        instrumented: bool,
    ) -> Result<Self, RunError> {
        let mut group = ReplicaGroup::create(program, config.n_initial, config.drain_budget);
        let (strategy, monitor) = match &platform.placement {
            PlacementStrategy::Adaptive => (
                platform.adaptive.initial.clone(),
                instrumented.then(|| AdaptiveMonitor::new(platform.adaptive.clone())),
            ),
            s => (s.clone(), None),
        };
        let ids = group.active_ids();
        let placement = place(&strategy, &ids, &platform.topology, &BTreeSet::new())?;
        for (&r, &c) in placement.assignment() {
            group.get_mut(r).core = Some(c);
        }
        let mut report = RunReport::empty();
        report.replica_trace.push((0, ids.len()));
        report.placement_trace.push((0, strategy));
        report.peak_backing_bytes = group.store.total_bytes() as u64;
        Ok(Self {
            program,
            config,
            platform,
            instrumented,
            group,
            placement,
            monitor,
            driver: FaultDriver::new(faults, config.ecc_memory),
            world,
            report,
        })
    }

    fn run(mut self) -> Result<RunReport, RunError> {
        let mut index = 0;
        let termination = loop {
            if index >= self.config.event_cap {
                break Termination::Hang(HangReason::EventCap);
            }
            let before = self.report.ledger.total();
            let end = self.round(index)?;
            self.report
                .round_cycles
                .push(self.report.ledger.total() - before);
            self.report.peak_backing_bytes = self
                .report
                .peak_backing_bytes
                .max(self.group.store.total_bytes() as u64);
            debug_assert_eq!(self.group.check_invariants(), Ok(()));
            if let Some(t) = end {
                break t;
            }
            index += 1;
        };
        Ok(self.finish(termination))
    }

    fn round(&mut self, index: u64) -> Result<Option<Termination>, RunError> {
        self.driver.apply_boundary(index, &mut self.group);

        let mut order = self.group.active_ids();
        self.config.resume_order.arrange(&mut order);
        let mut ballots = Vec::with_capacity(order.len());
        let mut samples = Vec::with_capacity(order.len());
        for id in order {
            let (event, stats) = self.advance(id);
            samples.push(SegmentSample::new(id, &stats));
            ballots.push((id, event));
        }
        ballots.sort_by_key(|b| b.0);
        self.driver.corrupt_channel(index, &mut ballots);

        let topology = &self.platform.topology;
        let seg = segment_cost(&samples, &self.placement, topology, &self.platform.costs);
        self.report.ledger.charge_segment(&seg);
        if let Some(m) = &mut self.monitor {
            m.observe(&samples, topology);
        }

        let event = match compare_and_vote(&ballots).verdict {
            Verdict::Unanimous(event) => event,
            Verdict::Majority {
                event,
                supporters,
                minority,
            } => {
                self.report.minority_votes += 1;
                self.recover(index, &minority, supporters[0]);
                event
            }
            Verdict::NoMajority => {
                let voters: Vec<_> = ballots.iter().map(|b| b.0).collect();
                self.charge_event(&voters, false)?;
                let end = if ballots.iter().all(|b| b.1.is_none()) {
                    Termination::Hang(HangReason::AllStalled)
                } else {
                    Termination::NoMajority
                };
                return Ok(Some(end));
            }
        };

        self.report.events_handled += 1;
        let voters = self.group.active_ids();
        self.charge_event(&voters, true)?;
        self.report.event_trace.push(TraceEntry {
            tag: event.kind.tag(),
            digest: event.digest,
        });
        if let Some(end) = self.proxy(index, &event) {
            return Ok(Some(end));
        }
        let group = &mut self.group;
        group.free_queue.drain(&mut group.store);
        self.scale(index, &event.kind);
        self.adapt(index)?;
        Ok(None)
    }

    /// Resumes one replica until it reaches an event. `None` means it did
    /// not get there: its core is dead or it exceeded the watermark.
    fn advance(&mut self, id: ReplicaId) -> (Option<ExternalizationEvent>, SegmentStats) {
        let timeout = self.config.permanent_fault_timeout;
        let core = self
            .placement
            .core_of(id)
            .expect("active replica is placed");
        let replica = self.group.get_mut(id);
        replica.state.begin_segment();
        replica.status = ReplicaStatus::Running;
        if self.driver.core_failed(core) {
            replica.status = ReplicaStatus::Faulted;
            return (None, stalled(timeout, SegmentStats::default()));
        }
        loop {
            let start = self.group.get(id).state.instr_count;
            let mut hook = self.driver.hook(id, core, start);
            let (state, mut mem) = self.group.view_mut(id);
            let trap = run_segment(self.program, state, &mut mem, &mut hook, timeout);
            let terminal = |kind| ExternalizationEvent {
                kind,
                digest: self.group.digest(id),
            };
            let event = match trap.kind {
                TrapKind::CowWrite { page } => {
                    let pages = self.group.privatize_on_write(id, page);
                    self.charge_scaling(pages as u64 * self.platform.costs.page_copy_cost_cycles);
                    continue;
                }
                TrapKind::Externalization(ev) => Some(ev),
                TrapKind::Halt => Some(terminal(EventKind::Halt)),
                TrapKind::VmFault(f) => Some(terminal(EventKind::Fault(f))),
                TrapKind::Watermark => None,
                TrapKind::Stalled => {
                    self.group.get_mut(id).status = ReplicaStatus::Faulted;
                    return (None, stalled(timeout, trap.stats));
                }
            };
            self.group.get_mut(id).status = if event.is_some() {
                ReplicaStatus::AtEvent
            } else {
                ReplicaStatus::Faulted
            };
            return (event, trap.stats);
        }
    }

    fn recover(&mut self, index: u64, minority: &[ReplicaId], canonical: ReplicaId) {
        let platform = self.platform;
        let costs = &platform.costs;
        for &m in minority {
            let core = self.placement.core_of(m).expect("voter is placed");
            if self.driver.core_failed(core) {
                self.placement.unassign(m);
                match self.spare_core() {
                    Some(spare) => {
                        self.placement.assign(m, spare);
                        self.group.get_mut(m).core = Some(spare);
                        self.report.migrations += 1;
                        self.charge_scaling(costs.migration_cost_cycles);
                    }
                    None => {
                        self.group.retire(m);
                        self.report.retired += 1;
                        self.report.degraded = true;
                        let n = self.group.active_count();
                        assert!(n >= 1, "retirement left no replica");
                        self.report.replica_trace.push((index, n));
                        continue;
                    }
                }
            }
            let pages = self.group.copy_state(canonical, m);
            self.group.get_mut(m).status = ReplicaStatus::AtEvent;
            self.report.recoveries += 1;
            self.charge_scaling(
                costs.state_copy_cost_cycles + pages as u64 * costs.page_copy_cost_cycles,
            );
        }
    }

    /// First free, healthy core in the order of the current layout.
    fn spare_core(&self) -> Option<CoreId> {
        let mut excluded = self.placement.used_cores();
        excluded.extend(self.driver.failed_cores().iter().copied());
        let order = match &self.placement.strategy {
            PlacementStrategy::Pinned(_) | PlacementStrategy::Adaptive => {
                PlacementStrategy::Sequential
            }
            s => s.clone(),
        };
        candidate_order(&order, &self.platform.topology, &excluded)
            .first()
            .copied()
    }

    /// Performs the voted event once and feeds the result to every active
    /// replica. Returns the termination for final events.
    fn proxy(&mut self, index: u64, event: &ExternalizationEvent) -> Option<Termination> {
        match &event.kind {
            EventKind::Exit { code } => {
                self.world.set_exit(*code);
                Some(Termination::Exit { code: *code })
            }
            EventKind::Halt => Some(Termination::Halt),
            EventKind::Fault(f) => Some(Termination::Crash(*f)),
            EventKind::Write { payload } => {
                self.world.write(index, payload.clone());
                self.set_result(payload.len() as u64);
                None
            }
            EventKind::Read { addr, len } => {
                let mut input = self.world.next_input();
                input.truncate((*len).min(input.len() as u64) as usize);
                self.deliver(*addr, &input);
                None
            }
            EventKind::Map { first_page, pages } => {
                let ok = match (u32::try_from(*first_page), u32::try_from(*pages)) {
                    (Ok(f), Ok(p)) => self.group.service_map(f, p).is_ok(),
                    _ => false,
                };
                self.set_result(if ok { 0 } else { u64::MAX });
                None
            }
            EventKind::HintRaise | EventKind::HintLower => None,
        }
    }

    fn set_result(&mut self, value: u64) {
        for id in self.group.active_ids() {
            self.group.get_mut(id).state.regs[0] = value;
        }
    }

    /// Copies read data into every active replica and sets r0 to the byte
    /// count, or to `u64::MAX` if the buffer is not writable.
    fn deliver(&mut self, addr: u64, bytes: &[u8]) {
        for id in self.group.active_ids() {
            loop {
                let (state, mut mem) = self.group.view_mut(id);
                match mem.write_bytes(addr, bytes) {
                    Ok(()) => state.regs[0] = bytes.len() as u64,
                    Err(MemFault::Cow { page }) => {
                        let pages = self.group.privatize_on_write(id, page);
                        self.charge_scaling(
                            pages as u64 * self.platform.costs.page_copy_cost_cycles,
                        );
                        continue;
                    }
                    Err(_) => state.regs[0] = u64::MAX,
                }
                break;
            }
        }
    }

    fn scale(&mut self, index: u64, kind: &EventKind) {
        if !self.instrumented || !self.config.honor_hints {
            return;
        }
        let changed = match kind {
            EventKind::HintLower => self.scale_down(),
            EventKind::HintRaise => self.scale_up(),
            _ => return,
        };
        if changed {
            self.report
                .replica_trace
                .push((index, self.group.active_count()));
        } else {
            self.report.scale_refusals += 1;
        }
    }

    /// Puts the highest-id active replica to sleep. Its core stays
    /// reserved.
    fn scale_down(&mut self) -> bool {
        let active = self.group.active_ids();
        if active.len() < 2 {
            return false;
        }
        let reference = self.group.digest(active[0]);
        assert!(
            active.iter().all(|&id| self.group.digest(id) == reference),
            "scale-down with diverged replicas"
        );
        let victim = *active.last().expect("two or more replicas");
        self.group.get_mut(victim).status = ReplicaStatus::Sleeping;
        self.group.release_replica_memory(victim);
        true
    }

    fn scale_up(&mut self) -> bool {
        let active = self.group.active_ids();
        let Some(&source) = active.first() else {
            return false;
        };
        let target = match self.group.sleeping_ids().first() {
            Some(&s) => s,
            None => {
                if active.len() >= self.config.max_replicas() {
                    return false;
                }
                let Some(core) = self.spare_core() else {
                    return false;
                };
                let id = self.group.spawn_sleeping(self.program);
                self.placement.assign(id, core);
                self.group.get_mut(id).core = Some(core);
                id
            }
        };
        let platform = self.platform;
        let costs = &platform.costs;
        match self.config.wakeup_mode {
            super::WakeupMode::Cow => {
                self.group.cow_attach(target, source);
                self.charge_scaling(costs.state_copy_cost_cycles);
            }
            super::WakeupMode::Eager => {
                let pages = self.group.copy_state(source, target);
                self.charge_scaling(
                    costs.state_copy_cost_cycles + pages as u64 * costs.page_copy_cost_cycles,
                );
            }
        }
        self.group.get_mut(target).status = ReplicaStatus::AtEvent;
        true
    }

    fn adapt(&mut self, index: u64) -> Result<(), RunError> {
        let Some(monitor) = &mut self.monitor else {
            return Ok(());
        };
        let excluded = self.driver.failed_cores().clone();
        let Some(next) =
            monitor.end_of_event(&self.placement, &self.platform.topology, &excluded)?
        else {
            return Ok(());
        };
        let moved = next.moved(&self.placement) as u64;
        for (&r, &c) in next.assignment() {
            self.group.get_mut(r).core = Some(c);
        }
        self.report
            .placement_trace
            .push((index + 1, next.strategy.clone()));
        self.placement = next;
        self.charge_scaling(moved * self.platform.costs.migration_cost_cycles);
        Ok(())
    }

    fn charge_event(&mut self, voters: &[ReplicaId], proxied: bool) -> Result<(), RunError> {
        if !self.instrumented {
            return Ok(());
        }
        let mut cost = event_cost(
            voters,
            &self.placement,
            &self.platform.notification,
            &self.platform.costs,
            &self.platform.topology,
        )?;
        if !proxied {
            cost.proxy = 0;
        }
        self.report.ledger.charge_event(&cost);
        Ok(())
    }

    fn charge_scaling(&mut self, cycles: u64) {
        if self.instrumented {
            self.report.ledger.charge_scaling(cycles);
        }
    }

    fn finish(mut self, termination: Termination) -> RunReport {
        let mut report = std::mem::replace(&mut self.report, RunReport::empty());
        report.termination = termination;
        report.outcome = match termination {
            Termination::Hang(_) => OutcomeClass::Hang,
            Termination::NoMajority => OutcomeClass::DetectedUnrecoverable,
            _ if report.minority_votes > 0 => OutcomeClass::DetectedCorrected,
            _ => OutcomeClass::Masked,
        };
        let active = self.group.active_ids();
        if let Some(&survivor) = active.first() {
            let r = self.group.get(survivor);
            report.instructions = r.state.instr_count;
            report.mapped_pages = r.space.page_indices().collect();
        }
        report.cores = active
            .iter()
            .filter_map(|&id| self.placement.core_of(id))
            .collect();
        report.injection = self.driver.stats();
        let (log, exit) = self.world.into_parts();
        report.output_log = log;
        report.exit_code = exit;
        report
    }
}

fn stalled(timeout: u64, mut stats: SegmentStats) -> SegmentStats {
    stats.instructions = timeout;
    stats
}
