use std::collections::BTreeSet;

use super::{FaultSpec, FaultTarget, Trigger};
use crate::memory::{MemoryView, ReplicaGroup, ReplicaId};
use crate::platform::CoreId;
use crate::vm::{ExecHook, ExternalizationEvent, HookAction, MachineState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InjectionStats {
    /// Faults that changed architectural state or killed a core.
    pub fired: u64,
    /// Memory faults reverted by ECC at injection.
    pub ecc_corrections: u64,
    /// Faults whose target did not exist when the trigger came.
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct Armed {
    spec: FaultSpec,
    done: bool,
}

/// Holds a run's fault list and applies each fault once when its trigger
/// is reached.
#[derive(Debug, Clone)]
pub struct FaultDriver {
    armed: Vec<Armed>,
    ecc: bool,
    failed_cores: BTreeSet<CoreId>,
    stats: InjectionStats,
}

enum Strike {
    Applied,
    Corrected,
    Missing,
    /// The page is shared copy-on-write and must be privatized first.
    Shared(u32),
}

fn flip_page_bit(
    mem: &mut MemoryView<'_>,
    page: u32,
    byte: u16,
    bit: u8,
    private: bool,
    ecc: bool,
) -> Strike {
    let Some(region) = mem.space.region_for_page(page) else {
        return Strike::Missing;
    };
    if ecc {
        return Strike::Corrected;
    }
    if private && region.cow {
        return Strike::Shared(page);
    }
    let offset = (page - region.first_page) as usize * crate::memory::PAGE_SIZE + byte as usize;
    mem.store.get_mut(region.backing).bytes_mut()[offset] ^= 1 << bit;
    Strike::Applied
}

impl FaultDriver {
    pub fn new(faults: &[FaultSpec], ecc: bool) -> Self {
        Self {
            armed: faults
                .iter()
                .map(|&spec| Armed { spec, done: false })
                .collect(),
            ecc,
            failed_cores: BTreeSet::new(),
            stats: InjectionStats::default(),
        }
    }

    pub fn stats(&self) -> InjectionStats {
        self.stats
    }

    pub fn failed_cores(&self) -> &BTreeSet<CoreId> {
        &self.failed_cores
    }

    pub fn core_failed(&self, core: CoreId) -> bool {
        self.failed_cores.contains(&core)
    }

    fn record(&mut self, strike: &Strike) {
        match strike {
            Strike::Applied => self.stats.fired += 1,
            Strike::Corrected => self.stats.ecc_corrections += 1,
            Strike::Missing => self.stats.dropped += 1,
            Strike::Shared(_) => {}
        }
    }

    /// Applies every fault triggered at the start of the segment leading to
    /// event `index`, except channel faults.
    pub fn apply_boundary(&mut self, index: u64, group: &mut ReplicaGroup) {
        for i in 0..self.armed.len() {
            let Armed { spec, done } = self.armed[i];
            if done || spec.trigger != Trigger::AtEventIndex(index) {
                continue;
            }
            if matches!(spec.target, FaultTarget::ChannelBit { .. }) {
                continue;
            }
            self.armed[i].done = true;
            let strike = match spec.target {
                FaultTarget::Register { replica, reg, bit } => {
                    if !active(group, replica) {
                        Strike::Missing
                    } else {
                        group.get_mut(replica).state.regs[reg as usize] ^= 1 << bit;
                        Strike::Applied
                    }
                }
                FaultTarget::MemoryBit {
                    replica,
                    page,
                    byte,
                    bit,
                } => {
                    if !active(group, replica) {
                        Strike::Missing
                    } else {
                        let ecc = self.ecc;
                        let mut strike = flip_page_bit(
                            &mut group.view_mut(replica).1,
                            page,
                            byte,
                            bit,
                            true,
                            ecc,
                        );
                        if let Strike::Shared(p) = strike {
                            group.privatize_on_write(replica, p);
                            strike = flip_page_bit(
                                &mut group.view_mut(replica).1,
                                page,
                                byte,
                                bit,
                                true,
                                ecc,
                            );
                        }
                        strike
                    }
                }
                FaultTarget::BackingBit {
                    replica,
                    page,
                    byte,
                    bit,
                } => {
                    if !active(group, replica) {
                        Strike::Missing
                    } else {
                        flip_page_bit(
                            &mut group.view_mut(replica).1,
                            page,
                            byte,
                            bit,
                            false,
                            self.ecc,
                        )
                    }
                }
                FaultTarget::CorePermanent { core } => {
                    self.failed_cores.insert(core);
                    Strike::Applied
                }
                FaultTarget::ChannelBit { .. } => unreachable!(),
            };
            self.record(&strike);
        }
    }

    /// Corrupts the digest of the lowest-id arrival in round `index` for
    /// every channel fault due then.
    pub fn corrupt_channel(
        &mut self,
        index: u64,
        ballots: &mut [(ReplicaId, Option<ExternalizationEvent>)],
    ) {
        for i in 0..self.armed.len() {
            let Armed { spec, done } = self.armed[i];
            let FaultTarget::ChannelBit { bit } = spec.target else {
                continue;
            };
            if done || spec.trigger != Trigger::AtEventIndex(index) {
                continue;
            }
            self.armed[i].done = true;
            match ballots.iter_mut().find_map(|(_, ev)| ev.as_mut()) {
                Some(ev) => {
                    ev.digest.0 ^= 1 << bit;
                    self.stats.fired += 1;
                }
                None => self.stats.dropped += 1,
            }
        }
    }

    /// Hook for one segment of `replica` running on `core`, starting at
    /// instruction count `start`.
    pub fn hook(&mut self, replica: ReplicaId, core: CoreId, start: u64) -> ReplicaHook<'_> {
        ReplicaHook {
            driver: self,
            replica,
            core,
            start,
        }
    }

    fn due(&self, replica: ReplicaId, core: CoreId) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.armed.iter().enumerate().filter_map(move |(i, a)| {
            let Trigger::AtInstruction(at) = a.spec.trigger else {
                return None;
            };
            if a.done {
                return None;
            }
            let mine = match a.spec.target {
                FaultTarget::Register { replica: r, .. }
                | FaultTarget::MemoryBit { replica: r, .. }
                | FaultTarget::BackingBit { replica: r, .. } => r == replica,
                FaultTarget::CorePermanent { core: c } => c == core,
                FaultTarget::ChannelBit { .. } => false,
            };
            mine.then_some((i, at))
        })
    }
}

fn active(group: &ReplicaGroup, id: ReplicaId) -> bool {
    (id.0 as usize) < group.len() && group.get(id).status.is_active()
}

/// [`ExecHook`] delivering instruction-triggered faults to one replica.
pub struct ReplicaHook<'a> {
    driver: &'a mut FaultDriver,
    replica: ReplicaId,
    core: CoreId,
    start: u64,
}

impl ExecHook for ReplicaHook<'_> {
    fn next_trigger(&self) -> Option<u64> {
        self.driver
            .due(self.replica, self.core)
            .map(|(_, at)| at)
            .filter(|&at| at >= self.start)
            .min()
    }

    fn fire(&mut self, state: &mut MachineState, mem: &mut MemoryView<'_>) -> HookAction {
        let now = state.instr_count;
        let Some((i, _)) = self
            .driver
            .due(self.replica, self.core)
            .find(|&(_, at)| at == now)
        else {
            return HookAction::Continue;
        };
        let spec = self.driver.armed[i].spec;
        let ecc = self.driver.ecc;
        let (strike, action) = match spec.target {
            FaultTarget::Register { reg, bit, .. } => {
                state.regs[reg as usize] ^= 1 << bit;
                (Strike::Applied, HookAction::Continue)
            }
            FaultTarget::MemoryBit {
                page, byte, bit, ..
            } => match flip_page_bit(mem, page, byte, bit, true, ecc) {
                Strike::Shared(p) => return HookAction::Privatize { page: p },
                s => (s, HookAction::Continue),
            },
            FaultTarget::BackingBit {
                page, byte, bit, ..
            } => (
                flip_page_bit(mem, page, byte, bit, false, ecc),
                HookAction::Continue,
            ),
            FaultTarget::CorePermanent { core } => {
                self.driver.failed_cores.insert(core);
                (Strike::Applied, HookAction::Stall)
            }
            FaultTarget::ChannelBit { .. } => unreachable!("channel faults are event-triggered"),
        };
        self.driver.armed[i].done = true;
        self.driver.record(&strike);
        action
    }
}
