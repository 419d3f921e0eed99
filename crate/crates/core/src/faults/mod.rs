//! Seeded transient and permanent fault injection, campaign planning and
//! outcome classification.

mod campaign;
mod driver;
mod outcome;

pub use campaign::{plan_campaign, run_seed, Campaign, FaultFamily, FaultSpace, Profile};
pub use driver::{FaultDriver, InjectionStats, ReplicaHook};
pub use outcome::{classify_outcome, OutcomeClass};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{ReplicaId, PAGE_SIZE};
use crate::platform::CoreId;
use crate::vm::NUM_REGS;

/// Where a fault strikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultTarget {
    Register {
        replica: ReplicaId,
        reg: u8,
        bit: u8,
    },
    /// One replica's view of a page. Shared pages are privatized first.
    MemoryBit {
        replica: ReplicaId,
        page: u32,
        byte: u16,
        bit: u8,
    },
    /// The backing object `replica` has bound to `page`. Every region
    /// referencing that backing sees the flip.
    BackingBit {
        replica: ReplicaId,
        page: u32,
        byte: u16,
        bit: u8,
    },
    /// The core stops executing for the rest of the run.
    CorePermanent { core: CoreId },
    /// A bit of the state digest in flight over the shared polling channel.
    ChannelBit { bit: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// When the target replica (or the replica resident on the target
    /// core) has retired this many instructions.
    AtInstruction(u64),
    /// At the start of the segment leading to event `k`.
    AtEventIndex(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub target: FaultTarget,
    pub trigger: Trigger,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FaultError {
    #[error("bit {bit} out of range (limit {limit})")]
    BitOutOfRange { bit: u8, limit: u8 },
    #[error("register r{0} does not exist")]
    NoSuchRegister(u8),
    #[error("byte offset {0} lies outside the page")]
    ByteOutOfPage(u16),
    #[error("channel faults need an event-index trigger")]
    ChannelTrigger,
    #[error("channel faults need the shared polling mechanism")]
    ChannelWithoutPolling,
    #[error("fault space is empty")]
    EmptySpace,
    #[error("{0}")]
    Profile(String),
}

impl FaultSpec {
    pub fn new(target: FaultTarget, trigger: Trigger) -> Self {
        Self { target, trigger }
    }

    pub fn validate(&self) -> Result<(), FaultError> {
        let check_byte = |byte: u16, bit: u8| {
            if byte as usize >= PAGE_SIZE {
                return Err(FaultError::ByteOutOfPage(byte));
            }
            if bit >= 8 {
                return Err(FaultError::BitOutOfRange { bit, limit: 8 });
            }
            Ok(())
        };
        match self.target {
            FaultTarget::Register { reg, bit, .. } => {
                if reg as usize >= NUM_REGS {
                    return Err(FaultError::NoSuchRegister(reg));
                }
                if bit >= 64 {
                    return Err(FaultError::BitOutOfRange { bit, limit: 64 });
                }
            }
            FaultTarget::MemoryBit { byte, bit, .. }
            | FaultTarget::BackingBit { byte, bit, .. } => check_byte(byte, bit)?,
            FaultTarget::CorePermanent { .. } => {}
            FaultTarget::ChannelBit { bit } => {
                if bit >= 64 {
                    return Err(FaultError::BitOutOfRange { bit, limit: 64 });
                }
                if !matches!(self.trigger, Trigger::AtEventIndex(_)) {
                    return Err(FaultError::ChannelTrigger);
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FaultTarget::Register { replica, reg, bit } => {
                write!(f, "reg {}:r{reg}.{bit}", replica.0)
            }
            FaultTarget::MemoryBit {
                replica,
                page,
                byte,
                bit,
            } => write!(f, "mem {}:{page}+{byte}.{bit}", replica.0),
            FaultTarget::BackingBit {
                replica,
                page,
                byte,
                bit,
            } => write!(f, "backing {}:{page}+{byte}.{bit}", replica.0),
            FaultTarget::CorePermanent { core } => write!(f, "core {core}"),
            FaultTarget::ChannelBit { bit } => write!(f, "channel .{bit}"),
        }
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::AtInstruction(n) => write!(f, "@i{n}"),
            Trigger::AtEventIndex(k) => write!(f, "@e{k}"),
        }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.target, self.trigger)
    }
}
