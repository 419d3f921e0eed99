use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    AddressSpace, BackingId, BackingStore, FreeQueue, MemoryError, MemoryView, RegionShape,
};
use crate::platform::CoreId;
use crate::vm::{digest, Digest, MachineState, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "replica {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaStatus {
    Running,
    AtEvent,
    Sleeping,
    Faulted,
    Retired,
}

impl ReplicaStatus {
    /// Participates in the next resume and vote.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            ReplicaStatus::Running | ReplicaStatus::AtEvent | ReplicaStatus::Faulted
        )
    }
}

#[derive(Debug, Clone)]
pub struct Replica {
    pub id: ReplicaId,
    pub state: MachineState,
    pub space: AddressSpace,
    pub status: ReplicaStatus,
    pub core: Option<CoreId>,
    /// Region layout remembered while sleeping.
    pub skeleton: Vec<RegionShape>,
}

/// All replicas of one protected program plus the memory they reference.
/// Only the master mutates it, and only between segments.
#[derive(Debug, Clone)]
pub struct ReplicaGroup {
    pub replicas: Vec<Replica>,
    pub store: BackingStore,
    pub free_queue: FreeQueue,
}

impl ReplicaGroup {
    /// Creates `n` fully replicated instances of `program`: every initial
    /// data page gets a private backing in every replica.
    pub fn create(program: &Program, n: usize, drain_budget: usize) -> Self {
        assert!(n >= 1, "need at least one replica");
        let mut group = Self {
            replicas: Vec::with_capacity(n),
            store: BackingStore::new(),
            free_queue: FreeQueue::new(drain_budget),
        };
        for _ in 0..n {
            let mut space = AddressSpace::new();
            for (page, bytes) in program.initial_data() {
                let b = group.store.allocate(1);
                group.store.get_mut(b).bytes_mut()[..bytes.len()].copy_from_slice(bytes);
                group.store.retain(b);
                space
                    .map(*page, 1, true, b, false)
                    .expect("program validated its data pages");
            }
            let id = ReplicaId(group.replicas.len() as u32);
            group.replicas.push(Replica {
                id,
                state: MachineState::new(program),
                space,
                status: ReplicaStatus::Running,
                core: None,
                skeleton: Vec::new(),
            });
        }
        group
    }

    pub fn get(&self, id: ReplicaId) -> &Replica {
        &self.replicas[id.0 as usize]
    }

    pub fn get_mut(&mut self, id: ReplicaId) -> &mut Replica {
        &mut self.replicas[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    /// Ids of replicas that run and vote, ascending.
    pub fn active_ids(&self) -> Vec<ReplicaId> {
        self.replicas
            .iter()
            .filter(|r| r.status.is_active())
            .map(|r| r.id)
            .collect()
    }

    pub fn sleeping_ids(&self) -> Vec<ReplicaId> {
        self.replicas
            .iter()
            .filter(|r| r.status == ReplicaStatus::Sleeping)
            .map(|r| r.id)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.replicas
            .iter()
            .filter(|r| r.status.is_active())
            .count()
    }

    pub fn digest(&self, id: ReplicaId) -> Digest {
        let r = self.get(id);
        digest(&r.state, &r.space, &self.store)
    }

    /// Splits out one replica's state and a memory view over its space.
    pub fn view_mut(&mut self, id: ReplicaId) -> (&mut MachineState, MemoryView<'_>) {
        let r = &mut self.replicas[id.0 as usize];
        (&mut r.state, MemoryView::new(&r.space, &mut self.store))
    }

    /// Maps fresh zero-filled pages into every active replica, each with its
    /// own backing. Sleeping replicas record the range for wake-up.
    pub fn service_map(&mut self, first_page: u32, pages: u32) -> Result<(), MemoryError> {
        for r in &self.replicas {
            if r.status.is_active() {
                r.space.check_range(first_page, pages)?;
            } else if r.status == ReplicaStatus::Sleeping {
                let mut probe = AddressSpace::new();
                for s in &r.skeleton {
                    probe
                        .map(
                            s.first_page,
                            s.pages,
                            s.writable,
                            BackingId(u32::MAX),
                            false,
                        )
                        .expect("skeleton is consistent");
                }
                probe.check_range(first_page, pages)?;
            }
        }
        for r in &mut self.replicas {
            if r.status.is_active() {
                let b = self.store.allocate(pages);
                self.store.retain(b);
                r.space.map(first_page, pages, true, b, false)?;
            } else if r.status == ReplicaStatus::Sleeping {
                let at = r.skeleton.partition_point(|s| s.first_page < first_page);
                r.skeleton.insert(
                    at,
                    RegionShape {
                        first_page,
                        pages,
                        writable: true,
                    },
                );
            }
        }
        Ok(())
    }

    /// Wakes `waking` by sharing every backing of `source` copy-on-write.
    /// Both sides' regions are flagged so whichever writes first privatizes.
    pub fn cow_attach(&mut self, waking: ReplicaId, source: ReplicaId) {
        assert_ne!(waking, source);
        assert_eq!(self.get(waking).status, ReplicaStatus::Sleeping);
        assert!(self.get(waking).space.regions().is_empty());
        debug_assert!(self.skeleton_matches(waking, source));

        let src = &mut self.replicas[source.0 as usize];
        let state = src.state.clone();
        let mut shared = Vec::with_capacity(src.space.regions().len());
        for region in src.space.regions_mut() {
            region.cow = true;
            shared.push(region.clone());
        }
        let dst = &mut self.replicas[waking.0 as usize];
        for region in shared {
            self.store.retain(region.backing);
            dst.space
                .map(
                    region.first_page,
                    region.pages,
                    region.writable,
                    region.backing,
                    true,
                )
                .expect("empty space accepts source layout");
        }
        dst.state = state;
        dst.skeleton.clear();
        dst.status = ReplicaStatus::AtEvent;
    }

    fn skeleton_matches(&self, waking: ReplicaId, source: ReplicaId) -> bool {
        let skeleton = &self.get(waking).skeleton;
        skeleton.is_empty() || *skeleton == self.get(source).space.shape()
    }

    /// Gives `replica` a private copy of the shared region containing
    /// `page`. Returns the number of pages copied.
    pub fn privatize_on_write(&mut self, replica: ReplicaId, page: u32) -> u32 {
        let r = &mut self.replicas[replica.0 as usize];
        let idx = r.space.find(page).expect("privatizing an unmapped page");
        let region = &mut r.space.regions_mut()[idx];
        assert!(region.cow, "privatizing a private region");
        let old = region.backing;
        let fresh = self.store.allocate_copy(old);
        self.store.retain(fresh);
        region.backing = fresh;
        region.cow = false;
        region.writable = true;
        let pages = region.pages;
        let remaining = self.store.release(old);
        if remaining == 0 {
            self.free_queue.push(old);
        } else if remaining == 1 {
            self.clear_last_sharer(old);
        }
        pages
    }

    fn clear_last_sharer(&mut self, backing: BackingId) {
        for r in &mut self.replicas {
            for region in r.space.regions_mut() {
                if region.backing == backing {
                    region.cow = false;
                }
            }
        }
    }

    /// Puts a sleeping replica's memory up for release. Exclusively owned
    /// backings go to the free queue; shared ones only lose a reference.
    /// The layout survives as a skeleton.
    pub fn release_replica_memory(&mut self, id: ReplicaId) {
        let r = &mut self.replicas[id.0 as usize];
        assert_eq!(r.status, ReplicaStatus::Sleeping);
        r.skeleton = r.space.shape();
        let regions = r.space.take_regions();
        for region in regions {
            self.drop_reference(region.backing);
        }
    }

    fn drop_reference(&mut self, backing: BackingId) {
        match self.store.release(backing) {
            0 => self.free_queue.push(backing),
            1 => self.clear_last_sharer(backing),
            _ => {}
        }
    }

    /// Makes `dst` an exact private copy of `src`: registers and counters,
    /// plus freshly allocated, byte-copied backings for every region. Any
    /// previous regions of `dst` are discarded. Returns pages copied.
    pub fn copy_state(&mut self, src: ReplicaId, dst: ReplicaId) -> u32 {
        assert_ne!(src, dst);
        let old = self.replicas[dst.0 as usize].space.take_regions();
        for region in old {
            self.drop_reference(region.backing);
        }
        let source = &self.replicas[src.0 as usize];
        let state = source.state.clone();
        let layout: Vec<_> = source.space.regions().to_vec();
        let mut copied = 0;
        let mut space = AddressSpace::new();
        for region in layout {
            let b = self.store.allocate_copy(region.backing);
            self.store.retain(b);
            space
                .map(region.first_page, region.pages, region.writable, b, false)
                .expect("source layout is valid");
            copied += region.pages;
        }
        let d = &mut self.replicas[dst.0 as usize];
        d.space = space;
        d.state = state;
        d.skeleton.clear();
        copied
    }

    /// Takes a replica out of service for good and drops its memory.
    pub fn retire(&mut self, id: ReplicaId) {
        let r = &mut self.replicas[id.0 as usize];
        r.status = ReplicaStatus::Retired;
        r.core = None;
        r.skeleton.clear();
        let regions = r.space.take_regions();
        for region in regions {
            self.drop_reference(region.backing);
        }
    }

    /// Adds a new sleeping replica with no memory, ready to be woken.
    pub fn spawn_sleeping(&mut self, program: &Program) -> ReplicaId {
        let id = ReplicaId(self.replicas.len() as u32);
        self.replicas.push(Replica {
            id,
            state: MachineState::new(program),
            space: AddressSpace::new(),
            status: ReplicaStatus::Sleeping,
            core: None,
            skeleton: Vec::new(),
        });
        id
    }

    /// Verifies refcount conservation, the COW sharing rule, and that
    /// queued backings are unreferenced.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut refs = std::collections::BTreeMap::<BackingId, u32>::new();
        for r in &self.replicas {
            for region in r.space.regions() {
                *refs.entry(region.backing).or_default() += 1;
            }
        }
        for obj in self.store.iter() {
            let counted = refs.get(&obj.id).copied().unwrap_or(0);
            if counted != obj.refcount {
                return Err(format!(
                    "{} has refcount {} but {} referencing regions",
                    obj.id, obj.refcount, counted
                ));
            }
        }
        for id in refs.keys() {
            if !self.store.contains(*id) {
                return Err(format!("region references freed backing {id}"));
            }
        }
        for r in &self.replicas {
            for region in r.space.regions() {
                if region.cow && self.store.get(region.backing).refcount < 2 {
                    return Err(format!(
                        "{} region at page {} is cow but unshared",
                        r.id, region.first_page
                    ));
                }
            }
        }
        for id in self.free_queue.pending() {
            if self.store.get(id).refcount != 0 {
                return Err(format!("queued {id} is still referenced"));
            }
        }
        Ok(())
    }
}
