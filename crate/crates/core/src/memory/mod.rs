//! Replica memory management.
//!
//! Every replica owns an [`AddressSpace`]: an ordered, non-overlapping list
//! of [`MemoryRegion`]s. Regions do not hold bytes themselves; they point at
//! a [`BackingObject`] in the group-wide [`BackingStore`]. With full
//! replication each region has a private backing. Copy-on-write wake-up lets
//! several regions share one backing, flagged `cow` so that the first store
//! traps back to the master for privatization.

mod backing;
mod replica;
mod space;

pub use backing::{BackingId, BackingObject, BackingStore, FreeQueue, DEFAULT_DRAIN_BUDGET};
pub use replica::{Replica, ReplicaGroup, ReplicaId, ReplicaStatus};
pub use space::{AddressSpace, MemFault, MemoryRegion, MemoryView, RegionId, RegionShape};

use thiserror::Error;

/// Bytes per guest page.
pub const PAGE_SIZE: usize = 4096;

/// Number of pages a single address space may span (16 MiB).
pub const MAX_PAGES: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("pages {first_page}..{end} overlap an existing region")]
    Overlap { first_page: u32, end: u64 },
    #[error("pages {first_page}..{end} exceed the {MAX_PAGES}-page address space")]
    AddressSpaceExhausted { first_page: u32, end: u64 },
    #[error("empty region at page {0}")]
    EmptyRegion(u32),
}
