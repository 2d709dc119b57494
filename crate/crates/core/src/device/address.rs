//! Logical address space split, page storage and page allocators.

use std::collections::{BTreeMap, BTreeSet};

use super::DeviceError;

/// Logical pages `[0, dp)` belong to the block interface, `[dp, total)` to
/// the key-value interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressSpace {
    pub total_pages: u64,
    pub page_size: u64,
    pub disaggregation_point: u64,
}

impl AddressSpace {
    pub fn new(total_pages: u64, page_size: u64, disaggregation_point: u64) -> Result<Self, DeviceError> {
        if page_size == 0 || disaggregation_point > total_pages {
            return Err(DeviceError::BadGeometry);
        }
        Ok(Self {
            total_pages,
            page_size,
            disaggregation_point,
        })
    }

    /// Splits `capacity` bytes so that `block_fraction` of the pages go to the block region.
    pub fn split(capacity: u64, page_size: u64, block_fraction: f64) -> Result<Self, DeviceError> {
        let total = capacity / page_size;
        let dp = (total as f64 * block_fraction).round() as u64;
        Self::new(total, page_size, dp.min(total))
    }

    pub fn block_pages(&self) -> u64 {
        self.disaggregation_point
    }

    pub fn kv_pages(&self) -> u64 {
        self.total_pages - self.disaggregation_point
    }

    /// Capacity the block interface reports to a file system.
    pub fn block_capacity(&self) -> u64 {
        self.disaggregation_point * self.page_size
    }

    pub fn kv_capacity(&self) -> u64 {
        self.kv_pages() * self.page_size
    }

    pub fn pages_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_size)
    }

    /// Checks that `[lba, lba + n)` lies in the block region.
    pub fn check_block(&self, lba: u64, n: u64) -> Result<(), DeviceError> {
        let end = lba.checked_add(n).ok_or(DeviceError::OutOfRange { lba, pages: n })?;
        if end > self.total_pages {
            return Err(DeviceError::OutOfRange { lba, pages: n });
        }
        if end > self.disaggregation_point {
            return Err(DeviceError::RegionFault { lba, pages: n });
        }
        Ok(())
    }

    pub fn is_kv_page(&self, page: u64) -> bool {
        page >= self.disaggregation_point && page < self.total_pages
    }
}

/// Sparse page store; unwritten pages read back as zeros.
#[derive(Debug, Clone)]
pub struct PageStore {
    page_size: usize,
    pages: Vec<Option<Box<[u8]>>>,
}

impl PageStore {
    pub fn new(space: &AddressSpace) -> Self {
        Self {
            page_size: space.page_size as usize,
            pages: vec![None; space.total_pages as usize],
        }
    }

    pub fn read(&self, page: u64, out: &mut Vec<u8>) {
        match &self.pages[page as usize] {
            Some(p) => out.extend_from_slice(p),
            None => out.resize(out.len() + self.page_size, 0),
        }
    }

    /// Writes `data` (at most one page; short writes are zero-padded).
    pub fn write(&mut self, page: u64, data: &[u8]) {
        let mut buf = vec![0u8; self.page_size].into_boxed_slice();
        buf[..data.len()].copy_from_slice(data);
        self.pages[page as usize] = Some(buf);
    }

    pub fn discard(&mut self, page: u64) {
        self.pages[page as usize] = None;
    }

    pub fn is_written(&self, page: u64) -> bool {
        self.pages[page as usize].is_some()
    }

    pub fn written_pages(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.pages
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_deref().map(|d| (i as u64, d)))
    }

    /// Reads `len` bytes starting at byte `offset` of the page list `pages`.
    pub fn read_span(&self, pages: &[u64], offset: usize, len: usize) -> Vec<u8> {
        let ps = self.page_size;
        let mut out = Vec::with_capacity(len);
        let mut pos = offset;
        while out.len() < len {
            let idx = pos / ps;
            let within = pos % ps;
            let take = (ps - within).min(len - out.len());
            match &self.pages[pages[idx] as usize] {
                Some(p) => out.extend_from_slice(&p[within..within + take]),
                None => out.resize(out.len() + take, 0),
            }
            pos += take;
        }
        out
    }
}

/// Free-page allocator over one region. Always hands out the lowest free pages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageAllocator {
    start: u64,
    end: u64,
    free: BTreeSet<u64>,
}

impl PageAllocator {
    pub fn new(start: u64, end: u64) -> Self {
        Self {
            start,
            end,
            free: (start..end).collect(),
        }
    }

    pub fn region_pages(&self) -> u64 {
        self.end - self.start
    }

    pub fn free_pages(&self) -> u64 {
        self.free.len() as u64
    }

    pub fn allocate(&mut self, n: u64) -> Option<Vec<u64>> {
        if (self.free.len() as u64) < n {
            return None;
        }
        Some((0..n).map(|_| self.free.pop_first().unwrap()).collect())
    }

    pub fn release(&mut self, pages: &[u64]) {
        for &p in pages {
            assert!(p >= self.start && p < self.end, "page {p} outside allocator region");
            let fresh = self.free.insert(p);
            assert!(fresh, "double free of page {p}");
        }
    }

    pub fn mark_used(&mut self, pages: &[u64]) -> bool {
        pages.iter().all(|p| self.free.remove(p))
    }

    pub fn is_free(&self, page: u64) -> bool {
        self.free.contains(&page)
    }
}

/// First-fit contiguous extent allocator (the host file system's view of the
/// block region).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtentAllocator {
    total: u64,
    /// start -> length of each free run.
    free: BTreeMap<u64, u64>,
}

impl ExtentAllocator {
    pub fn new(pages: u64) -> Self {
        let mut free = BTreeMap::new();
        if pages > 0 {
            free.insert(0, pages);
        }
        Self { total: pages, free }
    }

    pub fn free_pages(&self) -> u64 {
        self.free.values().sum()
    }

    pub fn total_pages(&self) -> u64 {
        self.total
    }

    pub fn allocate(&mut self, n: u64) -> Option<u64> {
        assert!(n > 0);
        let (&start, &len) = self.free.iter().find(|(_, &len)| len >= n)?;
        self.free.remove(&start);
        if len > n {
            self.free.insert(start + n, len - n);
        }
        Some(start)
    }

    pub fn release(&mut self, start: u64, n: u64) {
        let mut start = start;
        let mut len = n;
        if let Some((&ps, &pl)) = self.free.range(..start).next_back() {
            assert!(ps + pl <= start, "double free of extent at {start}");
            if ps + pl == start {
                self.free.remove(&ps);
                start = ps;
                len += pl;
            }
        }
        if let Some(&nl) = self.free.get(&(start + len)) {
            self.free.remove(&(start + len));
            len += nl;
        }
        assert!(
            self.free.range(start..start + len).next().is_none(),
            "double free of extent at {start}"
        );
        self.free.insert(start, len);
    }
}
