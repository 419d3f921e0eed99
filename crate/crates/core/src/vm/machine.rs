use std::fmt;

use serde::{Deserialize, Serialize};

use super::digest::digest;
use super::event::{EventKind, ExternalizationEvent};
use super::isa::{Instr, Program, Syscall, NUM_REGS};
use crate::memory::{MemFault, MemoryView, MAX_PAGES, PAGE_SIZE};

/// Largest payload a single write may externalize.
pub const MAX_WRITE_BYTES: u64 = 1 << 20;

const PAGE_WORDS: usize = MAX_PAGES as usize / 64;

/// Fixed-size bitset over every page index of an address space.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PageSet([u64; PAGE_WORDS]);

impl Default for PageSet {
    fn default() -> Self {
        Self([0; PAGE_WORDS])
    }
}

impl fmt::Debug for PageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl PageSet {
    #[inline]
    pub fn insert(&mut self, page: u32) {
        self.0[page as usize / 64] |= 1 << (page % 64);
    }

    pub fn contains(&self, page: u32) -> bool {
        page < MAX_PAGES && self.0[page as usize / 64] & (1 << (page % 64)) != 0
    }

    pub fn len(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn is_subset(&self, other: &PageSet) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().enumerate().flat_map(|(i, &w)| {
            (0..64u32)
                .filter(move |b| w & (1 << b) != 0)
                .map(move |b| i as u32 * 64 + b)
        })
    }
}

/// Memory access bookkeeping for the current segment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AccessStats {
    pub accesses: u64,
    pub touched: PageSet,
    pub dirty: PageSet,
}

/// Per-segment execution statistics carried by every trap.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentStats {
    pub instructions: u64,
    pub access: AccessStats,
}

impl SegmentStats {
    pub fn touched_pages(&self) -> u32 {
        self.access.touched.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub regs: [u64; NUM_REGS],
    pub pc: usize,
    /// Instructions retired since the program started.
    pub instr_count: u64,
    pub access: AccessStats,
    segment_base: u64,
}

impl MachineState {
    pub fn new(program: &Program) -> Self {
        Self {
            regs: [0; NUM_REGS],
            pc: program.entry(),
            instr_count: 0,
            access: AccessStats::default(),
            segment_base: 0,
        }
    }

    /// Resets per-segment bookkeeping; called by the master before resuming.
    pub fn begin_segment(&mut self) {
        self.access = AccessStats::default();
        self.segment_base = self.instr_count;
    }

    pub fn segment_stats(&self) -> SegmentStats {
        SegmentStats {
            instructions: self.instr_count - self.segment_base,
            access: self.access.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum VmFault {
    Unmapped { addr: u64 },
    ReadOnly { addr: u64 },
    Misaligned { addr: u64 },
    PcOutOfRange { pc: usize },
    PayloadTooLarge { len: u64 },
}

impl fmt::Display for VmFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VmFault::Unmapped { addr } => write!(f, "access to unmapped address {addr:#x}"),
            VmFault::ReadOnly { addr } => write!(f, "store to read-only address {addr:#x}"),
            VmFault::Misaligned { addr } => write!(f, "misaligned access at {addr:#x}"),
            VmFault::PcOutOfRange { pc } => write!(f, "pc {pc} outside program"),
            VmFault::PayloadTooLarge { len } => write!(f, "write of {len} bytes exceeds limit"),
        }
    }
}

impl VmFault {
    fn from_mem(fault: MemFault) -> Self {
        match fault {
            MemFault::Unmapped { addr } => VmFault::Unmapped { addr },
            MemFault::ReadOnly { addr } => VmFault::ReadOnly { addr },
            MemFault::Misaligned { addr } => VmFault::Misaligned { addr },
            MemFault::Cow { page } => VmFault::ReadOnly {
                addr: page as u64 * PAGE_SIZE as u64,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrapKind {
    /// SYS executed; pc already points past it.
    Externalization(ExternalizationEvent),
    Halt,
    VmFault(VmFault),
    /// Store into a copy-on-write page. Nothing retired; the master
    /// privatizes `page` and resumes the same segment.
    CowWrite {
        page: u32,
    },
    /// The segment ran `watermark` instructions without trapping.
    Watermark,
    /// An injection hook stopped the replica (dead core).
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub stats: SegmentStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookAction {
    /// Hook consumed its trigger; keep executing.
    Continue,
    /// The replica stops making progress.
    Stall,
    /// Hook needs `page` privatized before it can act; it will be asked
    /// again at the same instruction count.
    Privatize { page: u32 },
}

/// Callback interface for injecting faults mid-segment.
pub trait ExecHook {
    /// Instruction count at which the hook next wants control.
    fn next_trigger(&self) -> Option<u64>;
    fn fire(&mut self, state: &mut MachineState, mem: &mut MemoryView<'_>) -> HookAction;
}

pub struct NoHooks;

impl ExecHook for NoHooks {
    fn next_trigger(&self) -> Option<u64> {
        None
    }

    fn fire(&mut self, _: &mut MachineState, _: &mut MemoryView<'_>) -> HookAction {
        HookAction::Continue
    }
}

/// Runs one replica until it traps.
///
/// Never performs I/O: system calls come back as events for the master to
/// vote on and proxy. At most `watermark` instructions retire in this
/// segment (counted from the last [`MachineState::begin_segment`]).
pub fn run_segment(
    program: &Program,
    state: &mut MachineState,
    mem: &mut MemoryView<'_>,
    hooks: &mut dyn ExecHook,
    watermark: u64,
) -> Trap {
    let limit = state.segment_base.saturating_add(watermark);
    loop {
        let mut stop = limit;
        if let Some(at) = hooks.next_trigger() {
            if at == state.instr_count {
                match hooks.fire(state, mem) {
                    HookAction::Continue => continue,
                    HookAction::Stall => return finish(state, TrapKind::Stalled),
                    HookAction::Privatize { page } => {
                        return finish(state, TrapKind::CowWrite { page })
                    }
                }
            }
            if at > state.instr_count {
                stop = stop.min(at);
            }
        }
        if state.instr_count >= limit {
            return finish(state, TrapKind::Watermark);
        }
        while state.instr_count < stop {
            if let Some(kind) = step(program, state, mem) {
                return finish(state, kind);
            }
        }
    }
}

fn finish(state: &MachineState, kind: TrapKind) -> Trap {
    Trap {
        kind,
        stats: state.segment_stats(),
    }
}

#[inline]
fn step(program: &Program, state: &mut MachineState, mem: &mut MemoryView<'_>) -> Option<TrapKind> {
    let pc = state.pc;
    let Some(&instr) = program.instructions().get(pc) else {
        return Some(TrapKind::VmFault(VmFault::PcOutOfRange { pc }));
    };
    let regs = &mut state.regs;
    match instr {
        Instr::Movi { dst, imm } => regs[dst.index()] = imm,
        Instr::Mov { dst, src } => regs[dst.index()] = regs[src.index()],
        Instr::Alu { op, dst, src } => {
            regs[dst.index()] = op.apply(regs[dst.index()], regs[src.index()])
        }
        Instr::Ld { dst, base, offset } => {
            let addr = regs[base.index()].wrapping_add(offset as u64);
            match mem.load_u64(addr) {
                Ok(v) => regs[dst.index()] = v,
                Err(f) => return Some(TrapKind::VmFault(VmFault::from_mem(f))),
            }
            let page = (addr / PAGE_SIZE as u64) as u32;
            state.access.accesses += 1;
            state.access.touched.insert(page);
        }
        Instr::St { base, offset, src } => {
            let addr = regs[base.index()].wrapping_add(offset as u64);
            match mem.store_u64(addr, regs[src.index()]) {
                Ok(()) => {}
                Err(MemFault::Cow { page }) => return Some(TrapKind::CowWrite { page }),
                Err(f) => return Some(TrapKind::VmFault(VmFault::from_mem(f))),
            }
            let page = (addr / PAGE_SIZE as u64) as u32;
            state.access.accesses += 1;
            state.access.touched.insert(page);
            state.access.dirty.insert(page);
        }
        Instr::Jnz { cond, target } => {
            state.pc = if regs[cond.index()] != 0 {
                target
            } else {
                pc + 1
            };
            state.instr_count += 1;
            return None;
        }
        Instr::Jmp { target } => {
            state.pc = target;
            state.instr_count += 1;
            return None;
        }
        Instr::Sys(call) => {
            let (a0, a1) = (regs[0], regs[1]);
            let kind = match call {
                Syscall::Exit => EventKind::Exit { code: a0 },
                Syscall::Write => {
                    if a1 > MAX_WRITE_BYTES {
                        return Some(TrapKind::VmFault(VmFault::PayloadTooLarge { len: a1 }));
                    }
                    match mem.read_bytes(a0, a1 as usize) {
                        Ok(payload) => EventKind::Write { payload },
                        Err(f) => return Some(TrapKind::VmFault(VmFault::from_mem(f))),
                    }
                }
                Syscall::Read => EventKind::Read { addr: a0, len: a1 },
                Syscall::HintRaise => EventKind::HintRaise,
                Syscall::HintLower => EventKind::HintLower,
                Syscall::Map => EventKind::Map {
                    first_page: a0,
                    pages: a1,
                },
            };
            state.pc = pc + 1;
            state.instr_count += 1;
            let digest = digest(state, mem.space, mem.store);
            return Some(TrapKind::Externalization(ExternalizationEvent {
                kind,
                digest,
            }));
        }
        Instr::Halt => {
            state.instr_count += 1;
            return Some(TrapKind::Halt);
        }
    }
    state.pc = pc + 1;
    state.instr_count += 1;
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{AddressSpace, BackingStore};
    use crate::vm::assemble;

    fn setup(src: &str) -> (Program, MachineState, AddressSpace, BackingStore) {
        let program = assemble(src).unwrap();
        let state = MachineState::new(&program);
        let mut store = BackingStore::new();
        let mut space = AddressSpace::new();
        for (page, bytes) in program.initial_data() {
            let b = store.allocate(1);
            store.get_mut(b).bytes_mut()[..bytes.len()].copy_from_slice(bytes);
            store.retain(b);
            space.map(*page, 1, true, b, false).unwrap();
        }
        (program, state, space, store)
    }

    fn run(src: &str) -> (Trap, MachineState) {
        let (program, mut state, space, mut store) = setup(src);
        let mut mem = MemoryView::new(&space, &mut store);
        let trap = run_segment(&program, &mut state, &mut mem, &mut NoHooks, u64::MAX);
        (trap, state)
    }

    #[test]
    fn halt_counts_instructions() {
        let (trap, state) = run("MOVI r0, 0\nHALT");
        assert_eq!(trap.kind, TrapKind::Halt);
        assert_eq!(state.instr_count, 2);
        assert_eq!(trap.stats.instructions, 2);
    }

    #[test]
    fn write_captures_payload_and_advances_pc() {
        let src = ".data 1 \"hello\"\nMOVI r0, 4096\nMOVI r1, 5\nSYS 1\nHALT";
        let (trap, state) = run(src);
        let TrapKind::Externalization(ev) = trap.kind else {
            panic!("expected event, got {:?}", trap.kind);
        };
        assert_eq!(
            ev.kind,
            EventKind::Write {
                payload: b"hello".to_vec()
            }
        );
        assert_eq!(state.pc, 3);
        assert_eq!(state.instr_count, 3);
    }

    #[test]
    fn unmapped_load_faults_without_retiring() {
        let (trap, state) = run("MOVI r1, 8192\nLD r0, [r1]\nHALT");
        assert_eq!(
            trap.kind,
            TrapKind::VmFault(VmFault::Unmapped { addr: 8192 })
        );
        assert_eq!(state.instr_count, 1);
        assert_eq!(state.pc, 1);
    }

    #[test]
    fn falls_off_the_end() {
        let (trap, _) = run("MOVI r0, 1");
        assert_eq!(
            trap.kind,
            TrapKind::VmFault(VmFault::PcOutOfRange { pc: 1 })
        );
    }

    #[test]
    fn watermark_stops_infinite_loop() {
        let (program, mut state, space, mut store) = setup("l: JMP l");
        let mut mem = MemoryView::new(&space, &mut store);
        state.begin_segment();
        let trap = run_segment(&program, &mut state, &mut mem, &mut NoHooks, 1000);
        assert_eq!(trap.kind, TrapKind::Watermark);
        assert_eq!(trap.stats.instructions, 1000);
    }

    #[test]
    fn access_stats_track_dirty_subset_of_touched() {
        let src = "\
            .data 1 \"\"
            .data 2 \"\"
            MOVI r1, 4096
            LD r0, [r1]
            ST [r1+4096], r0
            LD r0, [r1+8]
            SYS 4
        ";
        let (trap, _) = run(src);
        assert_eq!(trap.stats.access.accesses, 3);
        assert_eq!(
            trap.stats.access.touched.iter().collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(trap.stats.access.dirty.iter().collect::<Vec<_>>(), vec![2]);
        assert!(trap
            .stats
            .access
            .dirty
            .is_subset(&trap.stats.access.touched));
    }

    struct FlipAt(Option<u64>);

    impl ExecHook for FlipAt {
        fn next_trigger(&self) -> Option<u64> {
            self.0
        }
        fn fire(&mut self, state: &mut MachineState, _: &mut MemoryView<'_>) -> HookAction {
            state.regs[0] ^= 1 << 3;
            self.0 = None;
            HookAction::Continue
        }
    }

    #[test]
    fn hook_fires_at_exact_count() {
        let (program, mut state, space, mut store) = setup("MOVI r0, 0\nMOVI r1, 1\nSYS 0");
        let mut mem = MemoryView::new(&space, &mut store);
        let mut hook = FlipAt(Some(1));
        let trap = run_segment(&program, &mut state, &mut mem, &mut hook, u64::MAX);
        let TrapKind::Externalization(ev) = trap.kind else {
            panic!()
        };
        assert_eq!(ev.kind, EventKind::Exit { code: 8 });
    }
}
