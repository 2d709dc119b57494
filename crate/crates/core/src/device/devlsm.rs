//! The in-device LSM write buffer: one memtable plus a flat, newest-first list
//! of device SSTs stored in the key-value region.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;

use super::address::{PageAllocator, PageStore};
use super::run::SortedRun;
use super::wire;
use super::DeviceError;
use crate::entry::Entry;
use crate::merge::{MergeCursor, Source};

#[derive(Debug, Clone, PartialEq)]
pub struct DevLsmConfig {
    pub memtable_bytes: u64,
    pub flush_enabled: bool,
    pub compaction_enabled: bool,
    /// Device SST count above which all device SSTs are merged into one.
    pub compaction_trigger: usize,
    /// Byte limit for buffered data; `None` means the whole key-value region.
    pub capacity: Option<u64>,
}

impl Default for DevLsmConfig {
    fn default() -> Self {
        Self {
            memtable_bytes: 256 * 1024,
            flush_enabled: true,
            compaction_enabled: true,
            compaction_trigger: 4,
            capacity: None,
        }
    }
}

/// Background work triggered by a put, in bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DevWork {
    pub flushed: u64,
    pub compacted: u64,
}

#[derive(Debug, Clone)]
pub struct DevLsm {
    cfg: DevLsmConfig,
    page_size: u64,
    region_bytes: u64,
    memtable: BTreeMap<Bytes, Entry>,
    /// Encoded size of the memtable contents.
    mem_bytes: u64,
    /// Newest first.
    ssts: Vec<Arc<SortedRun>>,
    next_id: u64,
}

impl DevLsm {
    pub fn new(cfg: DevLsmConfig, page_size: u64, region_bytes: u64) -> Self {
        Self {
            cfg,
            page_size,
            region_bytes,
            memtable: BTreeMap::new(),
            mem_bytes: 0,
            ssts: Vec::new(),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &DevLsmConfig {
        &self.cfg
    }

    pub fn capacity(&self) -> u64 {
        self.cfg.capacity.unwrap_or(self.region_bytes).min(self.region_bytes)
    }

    fn pages_bytes(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_size) * self.page_size
    }

    /// Bytes counted against capacity: device SST pages plus the memtable rounded up to pages.
    pub fn used_bytes(&self) -> u64 {
        self.sst_pages() * self.page_size + self.pages_bytes(self.mem_bytes)
    }

    pub fn sst_pages(&self) -> u64 {
        self.ssts.iter().map(|s| s.page_count()).sum()
    }

    pub fn sst_count(&self) -> usize {
        self.ssts.len()
    }

    pub fn ssts(&self) -> &[Arc<SortedRun>] {
        &self.ssts
    }

    pub fn memtable_entries(&self) -> impl Iterator<Item = &Entry> {
        self.memtable.values()
    }

    pub fn is_empty(&self) -> bool {
        self.memtable.is_empty() && self.ssts.is_empty()
    }

    pub fn min_key(&self) -> Option<Bytes> {
        let mem = self.memtable.keys().next();
        let sst = self.ssts.iter().map(|s| s.min_key()).min();
        mem.into_iter().chain(sst).min().cloned()
    }

    pub fn max_key(&self) -> Option<Bytes> {
        let mem = self.memtable.keys().next_back();
        let sst = self.ssts.iter().map(|s| s.max_key()).max();
        mem.into_iter().chain(sst).max().cloned()
    }

    pub fn put(&mut self, e: Entry, media: &mut PageStore, alloc: &mut PageAllocator) -> Result<DevWork, DeviceError> {
        if e.key.is_empty() {
            return Err(DeviceError::EmptyKey);
        }
        let rec = wire::record_len(&e) as u64;
        let replaced = self.memtable.get(&e.key).map_or(0, |old| wire::record_len(old) as u64);
        let new_mem = self.mem_bytes - replaced + rec;
        if self.sst_pages() * self.page_size + self.pages_bytes(new_mem) > self.capacity() {
            return Err(DeviceError::DeviceFull);
        }
        self.memtable.insert(e.key.clone(), e);
        self.mem_bytes = new_mem;
        let mut work = DevWork::default();
        if self.cfg.flush_enabled && self.mem_bytes >= self.cfg.memtable_bytes {
            work.flushed = self.flush(media, alloc)?;
            if self.cfg.compaction_enabled && self.ssts.len() > self.cfg.compaction_trigger {
                work.compacted = self.compact_all(media, alloc)?;
            }
        }
        Ok(work)
    }

    fn write_run(&mut self, entries: &[Entry], media: &mut PageStore, alloc: &mut PageAllocator) -> Result<Arc<SortedRun>, DeviceError> {
        let mut image = Vec::new();
        for e in entries {
            wire::encode_record(&mut image, e).map_err(DeviceError::Wire)?;
        }
        let n = image.len().div_ceil(self.page_size as usize) as u64;
        let pages = alloc.allocate(n).ok_or(DeviceError::DeviceFull)?;
        for (i, p) in pages.iter().enumerate() {
            let lo = i * self.page_size as usize;
            let hi = (lo + self.page_size as usize).min(image.len());
            media.write(*p, &image[lo..hi]);
        }
        let id = self.next_id;
        self.next_id += 1;
        let run = SortedRun::index(id, pages, &image, 0, entries.len()).map_err(DeviceError::Wire)?;
        Ok(Arc::new(run))
    }

    /// Writes the memtable out as a new device SST. Returns bytes written.
    pub fn flush(&mut self, media: &mut PageStore, alloc: &mut PageAllocator) -> Result<u64, DeviceError> {
        if self.memtable.is_empty() {
            return Ok(0);
        }
        let entries: Vec<Entry> = self.memtable.values().cloned().collect();
        let run = self.write_run(&entries, media, alloc)?;
        let bytes = run.data_len;
        self.ssts.insert(0, run);
        self.memtable.clear();
        self.mem_bytes = 0;
        Ok(bytes)
    }

    /// Merges every device SST into one. Tombstones are kept: older versions
    /// may still live in the host LSM.
    pub fn compact_all(&mut self, media: &mut PageStore, alloc: &mut PageAllocator) -> Result<u64, DeviceError> {
        if self.ssts.len() < 2 {
            return Ok(0);
        }
        let mut cursor = MergeCursor::new(self.ssts.iter().cloned().map(Source::run).collect());
        let mut merged = Vec::new();
        while let Some(e) = cursor.next_entry(media) {
            merged.push(e);
        }
        let input = cursor.bytes_read();
        let old = std::mem::take(&mut self.ssts);
        for s in &old {
            for &p in &s.pages {
                media.discard(p);
            }
            alloc.release(&s.pages);
        }
        let run = self.write_run(&merged, media, alloc)?;
        self.ssts.push(run);
        Ok(input)
    }

    /// Point lookup. Returns the newest entry (possibly a tombstone) and the
    /// number of device SSTs probed.
    pub fn get(&self, key: &[u8], media: &PageStore) -> (Option<Entry>, u32) {
        if let Some(e) = self.memtable.get(key) {
            return (Some(e.clone()), 0);
        }
        let mut probes = 0;
        for s in &self.ssts {
            if !s.covers(key) {
                continue;
            }
            probes += 1;
            if let Some(i) = s.find(key) {
                return (Some(s.read(i, media)), probes);
            }
        }
        (None, probes)
    }

    /// A merge cursor over everything buffered, newest first.
    pub fn cursor(&self) -> MergeCursor {
        let mem: Vec<Entry> = self.memtable.values().cloned().collect();
        let mut sources = vec![Source::mem(Arc::new(mem))];
        sources.extend(self.ssts.iter().cloned().map(Source::run));
        MergeCursor::new(sources)
    }

    /// Every key's newest version, in key order, tombstones included.
    pub fn scan_all(&self, media: &PageStore) -> Vec<Entry> {
        let mut c = self.cursor();
        std::iter::from_fn(|| c.next_entry(media)).collect()
    }

    pub fn reset(&mut self, media: &mut PageStore, alloc: &mut PageAllocator) {
        for s in self.ssts.drain(..) {
            for &p in &s.pages {
                media.discard(p);
            }
            alloc.release(&s.pages);
        }
        self.memtable.clear();
        self.mem_bytes = 0;
    }

    /// Restores state from an image.
    pub(crate) fn restore(&mut self, memtable: Vec<Entry>, ssts: Vec<Arc<SortedRun>>) {
        self.memtable = memtable.into_iter().map(|e| (e.key.clone(), e)).collect();
        self.mem_bytes = self.memtable.values().map(|e| wire::record_len(e) as u64).sum();
        self.next_id = ssts.iter().map(|s| s.id + 1).max().unwrap_or(0);
        self.ssts = ssts;
    }
}
