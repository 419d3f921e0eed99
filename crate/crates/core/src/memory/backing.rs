use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use super::PAGE_SIZE;

/// Backings released per externalization event by the deferred free queue.
pub const DEFAULT_DRAIN_BUDGET: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BackingId(pub u32);

impl fmt::Display for BackingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// Page-aligned byte store referenced by one or more regions.
#[derive(Debug, Clone)]
pub struct BackingObject {
    pub id: BackingId,
    bytes: Vec<u8>,
    /// Number of live regions bound to this backing.
    pub refcount: u32,
}

impl BackingObject {
    pub fn pages(&self) -> u32 {
        (self.bytes.len() / PAGE_SIZE) as u32
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }
}

/// Arena of all backings belonging to one replica group.
///
/// Ids are handed out in increasing order and never reused, so a run's
/// allocation history is deterministic.
#[derive(Debug, Clone, Default)]
pub struct BackingStore {
    objects: BTreeMap<BackingId, BackingObject>,
    next_id: u32,
}

impl BackingStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates a zero-filled backing with refcount 0.
    pub fn allocate(&mut self, pages: u32) -> BackingId {
        self.insert(vec![0; pages as usize * PAGE_SIZE])
    }

    /// Allocates a backing holding a byte-for-byte copy of `src`.
    pub fn allocate_copy(&mut self, src: BackingId) -> BackingId {
        let bytes = self.get(src).bytes.clone();
        self.insert(bytes)
    }

    fn insert(&mut self, bytes: Vec<u8>) -> BackingId {
        debug_assert_eq!(bytes.len() % PAGE_SIZE, 0);
        let id = BackingId(self.next_id);
        self.next_id += 1;
        self.objects.insert(
            id,
            BackingObject {
                id,
                bytes,
                refcount: 0,
            },
        );
        id
    }

    pub fn get(&self, id: BackingId) -> &BackingObject {
        self.objects
            .get(&id)
            .unwrap_or_else(|| panic!("dangling backing {id}"))
    }

    pub fn get_mut(&mut self, id: BackingId) -> &mut BackingObject {
        self.objects
            .get_mut(&id)
            .unwrap_or_else(|| panic!("dangling backing {id}"))
    }

    pub fn contains(&self, id: BackingId) -> bool {
        self.objects.contains_key(&id)
    }

    pub fn retain(&mut self, id: BackingId) {
        self.get_mut(id).refcount += 1;
    }

    /// Drops one reference and returns the remaining count.
    pub fn release(&mut self, id: BackingId) -> u32 {
        let obj = self.get_mut(id);
        assert!(obj.refcount > 0, "release of unreferenced backing {id}");
        obj.refcount -= 1;
        obj.refcount
    }

    /// Returns the memory of an unreferenced backing to the host.
    pub fn free(&mut self, id: BackingId) {
        let obj = self
            .objects
            .remove(&id)
            .unwrap_or_else(|| panic!("double free of backing {id}"));
        assert_eq!(obj.refcount, 0, "freeing referenced backing {id}");
    }

    /// Bytes held by every allocated backing, including ones waiting in a
    /// free queue.
    pub fn total_bytes(&self) -> usize {
        self.objects.values().map(|o| o.bytes.len()).sum()
    }

    /// Bytes held by backings that at least one region still references.
    pub fn live_bytes(&self) -> usize {
        self.objects
            .values()
            .filter(|o| o.refcount > 0)
            .map(|o| o.bytes.len())
            .sum()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BackingObject> {
        self.objects.values()
    }
}

/// Backings whose last reference is gone but whose memory has not yet been
/// returned. Drained a fixed number of entries per externalization event,
/// standing in for a background release worker.
#[derive(Debug, Clone)]
pub struct FreeQueue {
    pending: VecDeque<BackingId>,
    budget: usize,
}

impl Default for FreeQueue {
    fn default() -> Self {
        Self::new(DEFAULT_DRAIN_BUDGET)
    }
}

impl FreeQueue {
    pub fn new(budget: usize) -> Self {
        Self {
            pending: VecDeque::new(),
            budget: budget.max(1),
        }
    }

    pub fn push(&mut self, id: BackingId) {
        self.pending.push_back(id);
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn pending(&self) -> impl Iterator<Item = BackingId> + '_ {
        self.pending.iter().copied()
    }

    /// Frees up to `budget` queued backings. Returns how many were freed.
    pub fn drain(&mut self, store: &mut BackingStore) -> usize {
        let n = self.budget.min(self.pending.len());
        for id in self.pending.drain(..n) {
            store.free(id);
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocate_and_copy() {
        let mut store = BackingStore::new();
        let a = store.allocate(2);
        store.get_mut(a).bytes_mut()[5] = 9;
        let b = store.allocate_copy(a);
        assert_ne!(a, b);
        assert_eq!(store.get(b).bytes()[5], 9);
        assert_eq!(store.total_bytes(), 4 * PAGE_SIZE);
        assert_eq!(store.live_bytes(), 0);
    }

    #[test]
    fn drain_respects_budget() {
        let mut store = BackingStore::new();
        let mut q = FreeQueue::new(4);
        for _ in 0..10 {
            q.push(store.allocate(1));
        }
        let mut steps = 0;
        while !q.is_empty() {
            q.drain(&mut store);
            steps += 1;
        }
        assert_eq!(steps, 3);
        assert!(store.is_empty());
    }

    #[test]
    #[should_panic(expected = "freeing referenced")]
    fn free_referenced_panics() {
        let mut store = BackingStore::new();
        let a = store.allocate(1);
        store.retain(a);
        store.free(a);
    }
}
