use serde::{Deserialize, Serialize};

use super::{BackingId, BackingStore, MemoryError, MAX_PAGES, PAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRegion {
    pub id: RegionId,
    pub first_page: u32,
    pub pages: u32,
    pub writable: bool,
    pub backing: BackingId,
    /// Shared with another region; the first store must privatize.
    pub cow: bool,
}

impl MemoryRegion {
    pub fn end_page(&self) -> u32 {
        self.first_page + self.pages
    }

    pub fn contains_page(&self, page: u32) -> bool {
        page >= self.first_page && page < self.end_page()
    }

    pub fn shape(&self) -> RegionShape {
        RegionShape {
            first_page: self.first_page,
            pages: self.pages,
            writable: self.writable,
        }
    }
}

/// Layout of a region without its backing. Sleeping replicas keep a list of
/// these so they can be rebuilt on wake-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionShape {
    pub first_page: u32,
    pub pages: u32,
    pub writable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AddressSpace {
    regions: Vec<MemoryRegion>,
    next_region: u32,
}

impl AddressSpace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks that `[first_page, first_page + pages)` fits and is free.
    pub fn check_range(&self, first_page: u32, pages: u32) -> Result<(), MemoryError> {
        let end = first_page as u64 + pages as u64;
        if pages == 0 {
            return Err(MemoryError::EmptyRegion(first_page));
        }
        if end > MAX_PAGES as u64 {
            return Err(MemoryError::AddressSpaceExhausted { first_page, end });
        }
        let overlaps = self
            .regions
            .iter()
            .any(|r| (first_page as u64) < r.end_page() as u64 && end > r.first_page as u64);
        if overlaps {
            return Err(MemoryError::Overlap { first_page, end });
        }
        Ok(())
    }

    /// Inserts a region bound to `backing`. The caller owns the refcount.
    pub fn map(
        &mut self,
        first_page: u32,
        pages: u32,
        writable: bool,
        backing: BackingId,
        cow: bool,
    ) -> Result<RegionId, MemoryError> {
        self.check_range(first_page, pages)?;
        let id = RegionId(self.next_region);
        self.next_region += 1;
        let at = self.regions.partition_point(|r| r.first_page < first_page);
        self.regions.insert(
            at,
            MemoryRegion {
                id,
                first_page,
                pages,
                writable,
                backing,
                cow,
            },
        );
        Ok(id)
    }

    /// Index of the region containing `page`.
    pub fn find(&self, page: u32) -> Option<usize> {
        let at = self.regions.partition_point(|r| r.first_page <= page);
        if at == 0 {
            return None;
        }
        let idx = at - 1;
        self.regions[idx].contains_page(page).then_some(idx)
    }

    pub fn region_for_page(&self, page: u32) -> Option<&MemoryRegion> {
        self.find(page).map(|i| &self.regions[i])
    }

    pub fn regions(&self) -> &[MemoryRegion] {
        &self.regions
    }

    pub fn regions_mut(&mut self) -> &mut [MemoryRegion] {
        &mut self.regions
    }

    pub fn shape(&self) -> Vec<RegionShape> {
        self.regions.iter().map(MemoryRegion::shape).collect()
    }

    pub fn mapped_pages(&self) -> u32 {
        self.regions.iter().map(|r| r.pages).sum()
    }

    /// Page indices of every mapped page, ascending.
    pub fn page_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.regions.iter().flat_map(|r| r.first_page..r.end_page())
    }

    /// Removes every region and hands them back for refcount bookkeeping.
    pub fn take_regions(&mut self) -> Vec<MemoryRegion> {
        std::mem::take(&mut self.regions)
    }
}

/// Reasons a guest memory access cannot complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemFault {
    Unmapped {
        addr: u64,
    },
    ReadOnly {
        addr: u64,
    },
    Misaligned {
        addr: u64,
    },
    /// Store into a shared region; the master must privatize `page` first.
    Cow {
        page: u32,
    },
}

/// One replica's view of memory: its address space resolved against the
/// group's backing store.
pub struct MemoryView<'a> {
    pub space: &'a AddressSpace,
    pub store: &'a mut BackingStore,
}

impl<'a> MemoryView<'a> {
    pub fn new(space: &'a AddressSpace, store: &'a mut BackingStore) -> Self {
        Self { space, store }
    }

    fn locate(&self, addr: u64) -> Result<(&MemoryRegion, usize), MemFault> {
        let page = addr / PAGE_SIZE as u64;
        if page >= MAX_PAGES as u64 {
            return Err(MemFault::Unmapped { addr });
        }
        let region = self
            .space
            .region_for_page(page as u32)
            .ok_or(MemFault::Unmapped { addr })?;
        let offset = (addr - region.first_page as u64 * PAGE_SIZE as u64) as usize;
        Ok((region, offset))
    }

    pub fn load_u64(&self, addr: u64) -> Result<u64, MemFault> {
        if !addr.is_multiple_of(8) {
            return Err(MemFault::Misaligned { addr });
        }
        let (region, off) = self.locate(addr)?;
        let bytes = &self.store.get(region.backing).bytes()[off..off + 8];
        Ok(u64::from_le_bytes(bytes.try_into().unwrap()))
    }

    pub fn store_u64(&mut self, addr: u64, value: u64) -> Result<(), MemFault> {
        if !addr.is_multiple_of(8) {
            return Err(MemFault::Misaligned { addr });
        }
        let (region, off) = self.locate(addr)?;
        if region.cow {
            return Err(MemFault::Cow {
                page: (addr / PAGE_SIZE as u64) as u32,
            });
        }
        if !region.writable {
            return Err(MemFault::ReadOnly { addr });
        }
        let backing = region.backing;
        self.store.get_mut(backing).bytes_mut()[off..off + 8].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    /// Copies `len` bytes starting at `addr`, crossing regions as needed.
    pub fn read_bytes(&self, addr: u64, len: usize) -> Result<Vec<u8>, MemFault> {
        let mut out = Vec::with_capacity(len);
        let mut cur = addr;
        let end = addr
            .checked_add(len as u64)
            .ok_or(MemFault::Unmapped { addr })?;
        while cur < end {
            let (region, off) = self.locate(cur)?;
            let avail = region.pages as usize * PAGE_SIZE - off;
            let take = avail.min((end - cur) as usize);
            out.extend_from_slice(&self.store.get(region.backing).bytes()[off..off + take]);
            cur += take as u64;
        }
        Ok(out)
    }

    /// Writes `data` at `addr`. Fails without side effects if any byte of the
    /// range is unmapped, read-only or copy-on-write.
    pub fn write_bytes(&mut self, addr: u64, data: &[u8]) -> Result<(), MemFault> {
        let end = addr
            .checked_add(data.len() as u64)
            .ok_or(MemFault::Unmapped { addr })?;
        let mut cur = addr;
        let mut chunks = Vec::new();
        while cur < end {
            let (region, off) = self.locate(cur)?;
            if region.cow {
                return Err(MemFault::Cow {
                    page: (cur / PAGE_SIZE as u64) as u32,
                });
            }
            if !region.writable {
                return Err(MemFault::ReadOnly { addr: cur });
            }
            let avail = region.pages as usize * PAGE_SIZE - off;
            let take = avail.min((end - cur) as usize);
            chunks.push((region.backing, off, (cur - addr) as usize, take));
            cur += take as u64;
        }
        for (backing, off, src, take) in chunks {
            self.store.get_mut(backing).bytes_mut()[off..off + take]
                .copy_from_slice(&data[src..src + take]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space_with(store: &mut BackingStore, first: u32, pages: u32, cow: bool) -> AddressSpace {
        let mut space = AddressSpace::new();
        let b = store.allocate(pages);
        store.retain(b);
        space.map(first, pages, true, b, cow).unwrap();
        space
    }

    #[test]
    fn overlap_and_bounds() {
        let mut store = BackingStore::new();
        let space = space_with(&mut store, 10, 4, false);
        assert!(matches!(
            space.check_range(12, 4),
            Err(MemoryError::Overlap { .. })
        ));
        assert!(matches!(
            space.check_range(8, 3),
            Err(MemoryError::Overlap { .. })
        ));
        assert!(space.check_range(14, 1).is_ok());
        assert!(space.check_range(8, 2).is_ok());
        assert!(matches!(
            space.check_range(4095, 2),
            Err(MemoryError::AddressSpaceExhausted { .. })
        ));
        assert!(matches!(
            space.check_range(0, 0),
            Err(MemoryError::EmptyRegion(0))
        ));
    }

    #[test]
    fn find_uses_sorted_order() {
        let mut store = BackingStore::new();
        let mut space = AddressSpace::new();
        for first in [30, 10, 20] {
            let b = store.allocate(2);
            space.map(first, 2, true, b, false).unwrap();
        }
        let firsts: Vec<_> = space.regions().iter().map(|r| r.first_page).collect();
        assert_eq!(firsts, vec![10, 20, 30]);
        assert_eq!(space.region_for_page(21).unwrap().first_page, 20);
        assert!(space.region_for_page(22).is_none());
        assert!(space.region_for_page(9).is_none());
    }

    #[test]
    fn loads_stores_and_faults() {
        let mut store = BackingStore::new();
        let space = space_with(&mut store, 1, 2, false);
        let mut mem = MemoryView::new(&space, &mut store);
        let base = PAGE_SIZE as u64;
        mem.store_u64(base + 8, 0xdead_beef).unwrap();
        assert_eq!(mem.load_u64(base + 8).unwrap(), 0xdead_beef);
        assert_eq!(mem.load_u64(0), Err(MemFault::Unmapped { addr: 0 }));
        assert_eq!(
            mem.load_u64(base + 3),
            Err(MemFault::Misaligned { addr: base + 3 })
        );
        // Spans the page boundary inside one region.
        mem.write_bytes(base + 4094, b"abcd").unwrap();
        assert_eq!(mem.read_bytes(base + 4094, 4).unwrap(), b"abcd");
        assert!(mem.read_bytes(base * 3 - 2, 4).is_err());
    }

    #[test]
    fn cow_store_requests_privatization() {
        let mut store = BackingStore::new();
        let space = space_with(&mut store, 2, 1, true);
        let mut mem = MemoryView::new(&space, &mut store);
        let addr = 2 * PAGE_SIZE as u64;
        assert_eq!(mem.store_u64(addr, 1), Err(MemFault::Cow { page: 2 }));
        assert_eq!(mem.load_u64(addr), Ok(0));
    }
}
