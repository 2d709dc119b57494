//! Simulated dual-interface SSD.
//!
//! One logical address space is split at the disaggregation point into a
//! block region, used by the host file system, and a key-value region owned
//! by an in-device LSM. The device also owns the host link, so every command
//! charges its payload to the shared bandwidth ledger.

mod address;
mod devlsm;
mod image;
mod run;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;

pub use address::{AddressSpace, ExtentAllocator, PageAllocator, PageStore};
pub use devlsm::{DevLsm, DevLsmConfig, DevWork};
pub use run::SortedRun;
pub use wire::WireError;

use crate::entry::Entry;
use crate::merge::MergeCursor;
use crate::sim::{ConfigError, ConfigMap, Direction, Interconnect, Interface, Micros, SimConfig, SimError, TransferId};

/// Size of an NVMe submission queue entry; charged for commands without payload.
pub const COMMAND_BYTES: u64 = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("pages [{lba}, {lba}+{pages}) cross into the key-value region")]
    RegionFault { lba: u64, pages: u64 },
    #[error("pages [{lba}, {lba}+{pages}) are outside the device")]
    OutOfRange { lba: u64, pages: u64 },
    #[error("invalid device geometry")]
    BadGeometry,
    #[error("key-value region is full")]
    DeviceFull,
    #[error("empty key")]
    EmptyKey,
    #[error("iterator is closed or was invalidated")]
    InvalidIterator,
    #[error("range start is after range end")]
    BadRange,
    #[error("wire format: {0}")]
    Wire(#[from] WireError),
    #[error("device image: {0}")]
    Image(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Device-side CPU costs. The controller has one core, so all of this work is serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceCosts {
    pub kv_op_us: Micros,
    pub probe_us: Micros,
    pub flush_ns_per_byte: f64,
    pub compaction_ns_per_byte: f64,
    pub scan_ns_per_byte: f64,
}

impl Default for DeviceCosts {
    fn default() -> Self {
        Self {
            kv_op_us: 5,
            probe_us: 20,
            flush_ns_per_byte: 1.0,
            compaction_ns_per_byte: 4.0,
            scan_ns_per_byte: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub capacity: u64,
    pub page_size: u64,
    pub block_fraction: f64,
    pub dev_lsm: DevLsmConfig,
    pub costs: DeviceCosts,
    pub sim: SimConfig,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            capacity: 256 << 20,
            page_size: 4096,
            block_fraction: 0.75,
            dev_lsm: DevLsmConfig::default(),
            costs: DeviceCosts::default(),
            sim: SimConfig::default(),
        }
    }
}

impl DeviceConfig {
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        self.sim.apply(map)?;
        map.get_size("device_size", &mut self.capacity)?;
        map.get_size("page_size", &mut self.page_size)?;
        map.get("block_fraction", &mut self.block_fraction)?;
        map.get_size("dev_memtable_size", &mut self.dev_lsm.memtable_bytes)?;
        map.get_bool("dev_flush_enabled", &mut self.dev_lsm.flush_enabled)?;
        map.get_bool("dev_compaction_enabled", &mut self.dev_lsm.compaction_enabled)?;
        map.get("dev_compaction_trigger", &mut self.dev_lsm.compaction_trigger)?;
        let mut cap = self.dev_lsm.capacity.unwrap_or(0);
        map.get_size("dev_capacity", &mut cap)?;
        self.dev_lsm.capacity = (cap > 0).then_some(cap);
        map.get("dev_kv_op_us", &mut self.costs.kv_op_us)?;
        map.get("dev_probe_us", &mut self.costs.probe_us)?;
        map.get("dev_flush_ns_per_byte", &mut self.costs.flush_ns_per_byte)?;
        map.get("dev_compaction_ns_per_byte", &mut self.costs.compaction_ns_per_byte)?;
        map.get("dev_scan_ns_per_byte", &mut self.costs.scan_ns_per_byte)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    BlockRead,
    BlockWrite,
    KvPut,
    KvGet,
    KvSeek,
    KvNext,
    KvRangeScan,
    KvReset,
}

impl Opcode {
    pub fn interface(self) -> Interface {
        match self {
            Opcode::BlockRead | Opcode::BlockWrite => Interface::Block,
            _ => Interface::Kv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IterId(u64);

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceCommand {
    BlockRead { lba: u64, pages: u64 },
    BlockWrite { lba: u64, data: Vec<u8> },
    KvPut { entry: Entry },
    KvGet { key: Bytes },
    KvSeek { key: Bytes },
    KvNext { iter: IterId },
    KvRangeScan { start: Bytes, end: Bytes },
    KvReset,
}

impl DeviceCommand {
    pub fn opcode(&self) -> Opcode {
        match self {
            DeviceCommand::BlockRead { .. } => Opcode::BlockRead,
            DeviceCommand::BlockWrite { .. } => Opcode::BlockWrite,
            DeviceCommand::KvPut { .. } => Opcode::KvPut,
            DeviceCommand::KvGet { .. } => Opcode::KvGet,
            DeviceCommand::KvSeek { .. } => Opcode::KvSeek,
            DeviceCommand::KvNext { .. } => Opcode::KvNext,
            DeviceCommand::KvRangeScan { .. } => Opcode::KvRangeScan,
            DeviceCommand::KvReset => Opcode::KvReset,
        }
    }

    /// Host-to-device payload carried by the command.
    pub fn payload_size(&self) -> u64 {
        match self {
            DeviceCommand::BlockWrite { data, .. } => data.len() as u64,
            DeviceCommand::KvPut { entry } => wire::record_len(entry) as u64,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ack,
    Data(Vec<u8>),
    Value { entry: Option<Entry>, probes: u32 },
    Iter { iter: IterId, entry: Option<Entry> },
    Chunks(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Transfers started for this command with their projected completion times.
    pub transfers: Vec<(TransferId, Micros)>,
    /// Time at which the device worker finishes the command's own work.
    pub device_done: Micros,
    pub response: Response,
}

impl Completion {
    /// Projected completion assuming no further link traffic.
    pub fn done_at(&self) -> Micros {
        self.transfers.iter().map(|t| t.1).max().unwrap_or(0).max(self.device_done)
    }

    pub fn transfer_ids(&self) -> impl Iterator<Item = TransferId> + '_ {
        self.transfers.iter().map(|t| t.0)
    }
}

/// A serialized bulk range scan waiting to be delivered chunk by chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanStream {
    pub chunks: Vec<Vec<u8>>,
    pub records: usize,
    /// Time the device finishes serializing.
    pub ready_at: Micros,
    /// Device generation the scan reflects.
    pub generation: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceCounters {
    pub commands: BTreeMap<Opcode, u64>,
    pub probes: u64,
    pub dev_flush_bytes: u64,
    pub dev_compaction_bytes: u64,
    pub resets: u64,
}

#[derive(Debug, Clone)]
struct DevIter {
    cursor: MergeCursor,
    layout: u64,
}

#[derive(Debug, Clone)]
pub struct HybridDevice {
    space: AddressSpace,
    media: PageStore,
    kv_alloc: PageAllocator,
    dev: DevLsm,
    link: Interconnect,
    costs: DeviceCosts,
    busy_until: Micros,
    /// Bumped by every change to key-value data.
    generation: u64,
    /// Bumped whenever key-value pages are released.
    layout: u64,
    iters: BTreeMap<IterId, DevIter>,
    next_iter: u64,
    counters: DeviceCounters,
}

impl HybridDevice {
    pub fn new(cfg: &DeviceConfig) -> Result<Self, DeviceError> {
        let space = AddressSpace::split(cfg.capacity, cfg.page_size, cfg.block_fraction)?;
        let link = Interconnect::new(cfg.sim.bus_capacity, cfg.sim.device_capacity)?;
        Ok(Self::with_parts(space, cfg.dev_lsm.clone(), cfg.costs.clone(), link))
    }

    fn with_parts(space: AddressSpace, dev_cfg: DevLsmConfig, costs: DeviceCosts, link: Interconnect) -> Self {
        Self {
            media: PageStore::new(&space),
            kv_alloc: PageAllocator::new(space.disaggregation_point, space.total_pages),
            dev: DevLsm::new(dev_cfg, space.page_size, space.kv_capacity()),
            space,
            link,
            costs,
            busy_until: 0,
            generation: 0,
            layout: 0,
            iters: BTreeMap::new(),
            next_iter: 0,
            counters: DeviceCounters::default(),
        }
    }

    pub fn space(&self) -> &AddressSpace {
        &self.space
    }

    pub fn media(&self) -> &PageStore {
        &self.media
    }

    pub fn link(&self) -> &Interconnect {
        &self.link
    }

    pub fn link_mut(&mut self) -> &mut Interconnect {
        &mut self.link
    }

    pub fn now(&self) -> Micros {
        self.link.now()
    }

    pub fn dev_lsm(&self) -> &DevLsm {
        &self.dev
    }

    pub fn kv_allocator(&self) -> &PageAllocator {
        &self.kv_alloc
    }

    pub fn costs(&self) -> &DeviceCosts {
        &self.costs
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn counters(&self) -> &DeviceCounters {
        &self.counters
    }

    pub fn busy_until(&self) -> Micros {
        self.busy_until
    }

    /// Runs the link until every transfer is done. Used by synchronous callers.
    pub fn drain(&mut self) -> Micros {
        self.link.run_until_idle()
    }

    fn count(&mut self, op: Opcode) {
        *self.counters.commands.entry(op).or_default() += 1;
    }

    fn charge(&mut self, iface: Interface, dir: Direction, bytes: u64) -> Result<(TransferId, Micros), DeviceError> {
        Ok(self.link.charge_transfer(iface, dir, bytes.max(1))?)
    }

    /// Queues `us` of work on the device core and returns when it finishes.
    fn occupy(&mut self, us: Micros) -> Micros {
        let start = self.busy_until.max(self.link.now());
        self.busy_until = start + us;
        self.busy_until
    }

    fn ns(bytes: u64, per_byte: f64) -> Micros {
        (bytes as f64 * per_byte / 1000.0).ceil() as Micros
    }

    pub fn submit(&mut self, cmd: DeviceCommand) -> Result<Completion, DeviceError> {
        match cmd {
            DeviceCommand::BlockRead { lba, pages } => self.block_read(lba, pages),
            DeviceCommand::BlockWrite { lba, data } => self.block_write(lba, &data),
            DeviceCommand::KvPut { entry } => self.kv_put(entry),
            DeviceCommand::KvGet { key } => self.kv_get(&key),
            DeviceCommand::KvSeek { key } => self.kv_seek(&key),
            DeviceCommand::KvNext { iter } => self.kv_next(iter),
            DeviceCommand::KvRangeScan { start, end } => {
                let stream = self.kv_range_scan_bulk(&start, &end)?;
                let mut transfers = Vec::with_capacity(stream.chunks.len());
                for c in &stream.chunks {
                    transfers.push(self.deliver_chunk(c)?);
                }
                if transfers.is_empty() {
                    transfers.push(self.charge(Interface::Kv, Direction::DeviceToHost, COMMAND_BYTES)?);
                }
                Ok(Completion {
                    transfers,
                    device_done: stream.ready_at,
                    response: Response::Chunks(stream.chunks),
                })
            }
            DeviceCommand::KvReset => self.kv_reset(),
        }
    }

    pub fn block_read(&mut self, lba: u64, pages: u64) -> Result<Completion, DeviceError> {
        self.space.check_block(lba, pages)?;
        self.count(Opcode::BlockRead);
        let mut data = Vec::with_capacity((pages * self.space.page_size) as usize);
        for p in lba..lba + pages {
            self.media.read(p, &mut data);
        }
        let t = self.charge(Interface::Block, Direction::DeviceToHost, data.len() as u64)?;
        Ok(Completion {
            transfers: vec![t],
            device_done: self.now(),
            response: Response::Data(data),
        })
    }

    /// Charges a read of `bytes` starting at `lba` without copying the pages
    /// out. Used when the host already holds an index into the data.
    pub fn charge_block_read(&mut self, lba: u64, bytes: u64) -> Result<(TransferId, Micros), DeviceError> {
        self.space.check_block(lba, self.space.pages_for(bytes).max(1))?;
        self.count(Opcode::BlockRead);
        self.charge(Interface::Block, Direction::DeviceToHost, bytes)
    }

    /// Writes `data` starting at `lba`; the final page is zero-padded.
    pub fn block_write(&mut self, lba: u64, data: &[u8]) -> Result<Completion, DeviceError> {
        let pages = self.space.pages_for(data.len() as u64).max(1);
        self.space.check_block(lba, pages)?;
        self.count(Opcode::BlockWrite);
        let ps = self.space.page_size as usize;
        for i in 0..pages as usize {
            let lo = (i * ps).min(data.len());
            let hi = ((i + 1) * ps).min(data.len());
            self.media.write(lba + i as u64, &data[lo..hi]);
        }
        let t = self.charge(Interface::Block, Direction::HostToDevice, data.len() as u64)?;
        Ok(Completion {
            transfers: vec![t],
            device_done: self.now(),
            response: Response::Ack,
        })
    }

    /// Releases block pages the host file system no longer uses.
    pub fn block_trim(&mut self, lba: u64, pages: u64) -> Result<(), DeviceError> {
        self.space.check_block(lba, pages)?;
        for p in lba..lba + pages {
            self.media.discard(p);
        }
        Ok(())
    }

    pub fn kv_put(&mut self, entry: Entry) -> Result<Completion, DeviceError> {
        if entry.key.is_empty() {
            return Err(DeviceError::EmptyKey);
        }
        let bytes = wire::record_len(&entry) as u64;
        let work = self.dev.put(entry, &mut self.media, &mut self.kv_alloc)?;
        self.count(Opcode::KvPut);
        self.generation += 1;
        let t = self.charge(Interface::Kv, Direction::HostToDevice, bytes)?;
        let done = self.occupy(self.costs.kv_op_us);
        self.background(work);
        Ok(Completion {
            transfers: vec![t],
            device_done: done,
            response: Response::Ack,
        })
    }

    fn background(&mut self, work: DevWork) {
        self.counters.dev_flush_bytes += work.flushed;
        self.counters.dev_compaction_bytes += work.compacted;
        let us = Self::ns(work.flushed, self.costs.flush_ns_per_byte)
            + Self::ns(work.compacted, self.costs.compaction_ns_per_byte);
        if us > 0 {
            self.occupy(us);
        }
        if work.compacted > 0 {
            self.layout += 1;
        }
    }

    pub fn kv_get(&mut self, key: &[u8]) -> Result<Completion, DeviceError> {
        if key.is_empty() {
            return Err(DeviceError::EmptyKey);
        }
        self.count(Opcode::KvGet);
        let (entry, probes) = self.dev.get(key, &self.media);
        self.counters.probes += probes as u64;
        let bytes = entry.as_ref().map_or(COMMAND_BYTES, |e| wire::record_len(e) as u64);
        let t = self.charge(Interface::Kv, Direction::DeviceToHost, bytes)?;
        let done = self.occupy(self.costs.kv_op_us + self.costs.probe_us * probes as u64);
        Ok(Completion {
            transfers: vec![t],
            device_done: done,
            response: Response::Value { entry, probes },
        })
    }

    /// Opens an iterator positioned at the first key `>= key`. Tombstones are returned.
    pub fn kv_seek(&mut self, key: &[u8]) -> Result<Completion, DeviceError> {
        self.count(Opcode::KvSeek);
        let mut cursor = self.dev.cursor();
        cursor.seek(key);
        let id = IterId(self.next_iter);
        self.next_iter += 1;
        self.iters.insert(
            id,
            DevIter {
                cursor,
                layout: self.layout,
            },
        );
        self.step_iter(id)
    }

    pub fn kv_next(&mut self, iter: IterId) -> Result<Completion, DeviceError> {
        self.count(Opcode::KvNext);
        self.step_iter(iter)
    }

    pub fn close_iter(&mut self, iter: IterId) {
        self.iters.remove(&iter);
    }

    fn step_iter(&mut self, id: IterId) -> Result<Completion, DeviceError> {
        let it = self.iters.get_mut(&id).ok_or(DeviceError::InvalidIterator)?;
        if it.layout != self.layout {
            self.iters.remove(&id);
            return Err(DeviceError::InvalidIterator);
        }
        let entry = it.cursor.next_entry(&self.media);
        let bytes = entry.as_ref().map_or(COMMAND_BYTES, |e| wire::record_len(e) as u64);
        let t = self.charge(Interface::Kv, Direction::DeviceToHost, bytes)?;
        let done = self.occupy(self.costs.kv_op_us);
        Ok(Completion {
            transfers: vec![t],
            device_done: done,
            response: Response::Iter { iter: id, entry },
        })
    }

    /// Serializes every newest version in `[start, end]` into chunks. Nothing
    /// crosses the link until each chunk is delivered.
    pub fn kv_range_scan_bulk(&mut self, start: &[u8], end: &[u8]) -> Result<ScanStream, DeviceError> {
        self.scan_filtered(start, end, 0)
    }

    /// Like [`kv_scan_all`](Self::kv_scan_all) but only emits records with `seq >= min_seq`.
    pub fn kv_scan_newer(&mut self, min_seq: u64) -> Result<ScanStream, DeviceError> {
        match (self.dev.min_key(), self.dev.max_key()) {
            (Some(lo), Some(hi)) => self.scan_filtered(&lo, &hi, min_seq),
            _ => Ok(self.empty_stream()),
        }
    }

    fn empty_stream(&self) -> ScanStream {
        ScanStream {
            chunks: Vec::new(),
            records: 0,
            ready_at: self.now(),
            generation: self.generation,
        }
    }

    fn scan_filtered(&mut self, start: &[u8], end: &[u8], min_seq: u64) -> Result<ScanStream, DeviceError> {
        if start > end {
            return Err(DeviceError::BadRange);
        }
        self.count(Opcode::KvRangeScan);
        let mut cursor = self.dev.cursor();
        cursor.seek(start);
        let mut writer = wire::ChunkWriter::new();
        let mut bytes = 0u64;
        while cursor.peek_key().is_some_and(|k| k.as_ref() <= end) {
            let e = cursor.next_entry(&self.media).expect("peeked");
            bytes += wire::record_len(&e) as u64;
            if e.seq >= min_seq {
                writer.push(&e)?;
            }
        }
        let records = writer.record_count();
        let ready_at = self.occupy(self.costs.kv_op_us + Self::ns(bytes, self.costs.scan_ns_per_byte));
        Ok(ScanStream {
            chunks: writer.finish(),
            records,
            ready_at,
            generation: self.generation,
        })
    }

    /// Full-range bulk scan.
    pub fn kv_scan_all(&mut self) -> Result<ScanStream, DeviceError> {
        match (self.dev.min_key(), self.dev.max_key()) {
            (Some(lo), Some(hi)) => self.kv_range_scan_bulk(&lo, &hi),
            _ => Ok(self.empty_stream()),
        }
    }

    /// Sends one scan chunk to the host over the key-value interface.
    pub fn deliver_chunk(&mut self, chunk: &[u8]) -> Result<(TransferId, Micros), DeviceError> {
        self.charge(Interface::Kv, Direction::DeviceToHost, chunk.len() as u64)
    }

    pub fn kv_reset(&mut self) -> Result<Completion, DeviceError> {
        self.count(Opcode::KvReset);
        self.counters.resets += 1;
        self.dev.reset(&mut self.media, &mut self.kv_alloc);
        self.generation += 1;
        self.layout += 1;
        self.iters.clear();
        let t = self.charge(Interface::Kv, Direction::HostToDevice, COMMAND_BYTES)?;
        let done = self.occupy(self.costs.kv_op_us);
        Ok(Completion {
            transfers: vec![t],
            device_done: done,
            response: Response::Ack,
        })
    }

    /// Newest device version of `key` without touching the link or counters.
    pub fn peek_kv(&self, key: &[u8]) -> Option<Entry> {
        self.dev.get(key, &self.media).0
    }

    /// Newest device version of every key, tombstones included, without charges.
    pub fn peek_all(&self) -> Vec<Entry> {
        self.dev.scan_all(&self.media)
    }

    /// Checks that key-value pages live in the key-value region, are marked
    /// allocated, and do not collide with the given block extents.
    pub fn check_regions(&self, block_extents: &[(u64, u64)]) -> Result<(), String> {
        let mut owned = std::collections::BTreeSet::new();
        for s in self.dev.ssts() {
            for &p in &s.pages {
                if !self.space.is_kv_page(p) {
                    return Err(format!("device SST page {p} outside key-value region"));
                }
                if self.kv_alloc.is_free(p) {
                    return Err(format!("device SST page {p} is marked free"));
                }
                if !owned.insert(p) {
                    return Err(format!("device page {p} owned twice"));
                }
            }
        }
        if owned.len() as u64 + self.kv_alloc.free_pages() != self.space.kv_pages() {
            return Err("key-value allocator leaked pages".into());
        }
        for &(start, n) in block_extents {
            if start + n > self.space.disaggregation_point {
                return Err(format!("block extent at {start} crosses the disaggregation point"));
            }
        }
        Ok(())
    }

    /// Serializes both regions and the key-value allocator state.
    pub fn dump_image(&self) -> Vec<u8> {
        image::dump(self)
    }

    /// Rebuilds a device from an image. The link starts idle at time zero.
    pub fn load_image(bytes: &[u8], cfg: &DeviceConfig) -> Result<Self, DeviceError> {
        let link = Interconnect::new(cfg.sim.bus_capacity, cfg.sim.device_capacity)?;
        image::load(bytes, cfg.dev_lsm.clone(), cfg.costs.clone(), link)
    }

    pub(crate) fn dev_parts(&self) -> (&DevLsm, &PageStore) {
        (&self.dev, &self.media)
    }

    pub(crate) fn media_mut(&mut self) -> &mut PageStore {
        &mut self.media
    }
}

pub(crate) fn runs_from_media(
    media: &PageStore,
    specs: Vec<(u64, u32, u64, Vec<u64>)>,
) -> Result<Vec<Arc<SortedRun>>, DeviceError> {
    specs
        .into_iter()
        .map(|(id, count, data_len, pages)| {
            let bytes = media.read_span(&pages, 0, data_len as usize);
            let mut run = SortedRun::index(id, pages, &bytes, 0, count as usize)?;
            run.data_len = data_len;
            Ok(Arc::new(run))
        })
        .collect()
}
