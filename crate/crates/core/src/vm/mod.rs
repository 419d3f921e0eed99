//! The guest: a tiny deterministic register machine.
//!
//! Replicas execute [`Program`]s until they hit a system call, halt, or
//! fault. Those traps are the only points where a replica's behaviour
//! becomes visible outside its sandbox, and thus the points where the master
//! compares replicas via their [`Digest`].

mod asm;
mod digest;
mod event;
mod isa;
mod machine;
pub mod workloads;

pub use asm::{assemble, assemble_with, ParseError};
pub use digest::{digest, Digest, Fnv1a64, FNV_OFFSET_BASIS, FNV_PRIME};
pub use event::{EventKind, EventTag, ExternalizationEvent};
pub use isa::{AluOp, Instr, Program, ProgramError, Reg, Syscall, NUM_REGS};
pub use machine::{
    run_segment, AccessStats, ExecHook, HookAction, MachineState, NoHooks, PageSet, SegmentStats,
    Trap, TrapKind, VmFault, MAX_WRITE_BYTES,
};
