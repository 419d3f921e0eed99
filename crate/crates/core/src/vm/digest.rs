use std::fmt;

use serde::{Deserialize, Serialize};

use super::MachineState;
use crate::memory::{AddressSpace, BackingStore, PAGE_SIZE};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit fingerprint of a replica's architectural state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Digest(pub u64);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// FNV-1a folded over 64-bit words.
///
/// Each step XORs a whole word into the state and multiplies by the odd FNV
/// prime. Both operations are bijections on `u64`, so changing any single
/// input word (and therefore any single bit) always changes the result.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64(u64);

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self(FNV_OFFSET_BASIS)
    }
}

impl Fnv1a64 {
    #[inline]
    pub fn word(&mut self, w: u64) {
        self.0 ^= w;
        self.0 = self.0.wrapping_mul(FNV_PRIME);
    }

    /// Folds `bytes` as little-endian words. Length must be a multiple of 8.
    pub fn words_le(&mut self, bytes: &[u8]) {
        debug_assert_eq!(bytes.len() % 8, 0);
        for chunk in bytes.chunks_exact(8) {
            self.word(u64::from_le_bytes(chunk.try_into().unwrap()));
        }
    }

    pub fn finish(self) -> Digest {
        Digest(self.0)
    }
}

/// Digest over r0..r7, pc, then every mapped page in ascending page order.
/// Bookkeeping (instruction count, access statistics) is excluded.
pub fn digest(state: &MachineState, space: &AddressSpace, store: &BackingStore) -> Digest {
    let mut h = Fnv1a64::default();
    for r in state.regs {
        h.word(r);
    }
    h.word(state.pc as u64);
    for region in space.regions() {
        let bytes = store.get(region.backing).bytes();
        h.words_le(&bytes[..region.pages as usize * PAGE_SIZE]);
    }
    h.finish()
}
