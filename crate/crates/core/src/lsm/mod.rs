//! Host-side LSM tree (Main-LSM) stored through the device's block interface.
//!
//! Flushes and compactions are resumable jobs. Each call to [`MainLsm::step`]
//! performs one phase and reports what the caller must wait for: link
//! transfers or a CPU phase of known duration. Synchronous callers can use
//! [`MainLsm::run_job`] and [`MainLsm::settle`] instead.

mod memtable;
pub mod sst;
mod stall;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use bytes::Bytes;

pub use memtable::Memtable;
pub use sst::SsTable;
pub use stall::{StallReason, StallStatus, Verdict};

use crate::device::{DeviceError, ExtentAllocator, HybridDevice, PageStore};
use crate::entry::Entry;
use crate::merge::{MergeCursor, Source};
use crate::sim::{ConfigError, ConfigMap, Micros, SimConfig, TransferId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WritePolicy {
    /// Writes block on stop conditions only.
    Stall,
    /// Writes also sleep while a slowdown condition holds.
    Slowdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmConfig {
    pub memtable_bytes: u64,
    pub max_imts: usize,
    pub l0_compaction_trigger: usize,
    pub l0_slowdown: usize,
    pub l0_stop: usize,
    pub pending_soft: u64,
    pub pending_hard: u64,
    pub l1_target: u64,
    pub level_ratio: u64,
    pub sst_target: u64,
    pub num_levels: usize,
    pub compaction_workers: usize,
    pub policy: WritePolicy,
    pub slowdown_sleep_us: Micros,
    pub flush_cpu_ns_per_byte: f64,
    pub compaction_cpu_ns_per_byte: f64,
}

impl Default for LsmConfig {
    fn default() -> Self {
        Self {
            memtable_bytes: 1 << 20,
            max_imts: 2,
            l0_compaction_trigger: 2,
            l0_slowdown: 4,
            l0_stop: 8,
            pending_soft: 16 << 20,
            pending_hard: 64 << 20,
            l1_target: 4 << 20,
            level_ratio: 10,
            sst_target: 1 << 20,
            num_levels: 7,
            compaction_workers: 1,
            policy: WritePolicy::Stall,
            slowdown_sleep_us: 1000,
            flush_cpu_ns_per_byte: 1.0,
            compaction_cpu_ns_per_byte: SimConfig::default().compaction_cpu_ns_per_byte,
        }
    }
}

impl LsmConfig {
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        map.get_size("memtable_size", &mut self.memtable_bytes)?;
        map.get("max_imts", &mut self.max_imts)?;
        map.get("l0_compaction_trigger", &mut self.l0_compaction_trigger)?;
        map.get("l0_slowdown", &mut self.l0_slowdown)?;
        map.get("l0_stop", &mut self.l0_stop)?;
        map.get_size("pending_soft", &mut self.pending_soft)?;
        map.get_size("pending_hard", &mut self.pending_hard)?;
        map.get_size("l1_target", &mut self.l1_target)?;
        map.get("level_ratio", &mut self.level_ratio)?;
        map.get_size("sst_target", &mut self.sst_target)?;
        map.get("num_levels", &mut self.num_levels)?;
        map.get("compaction_workers", &mut self.compaction_workers)?;
        map.get("slowdown_sleep_us", &mut self.slowdown_sleep_us)?;
        map.get("flush_cpu_ns_per_byte", &mut self.flush_cpu_ns_per_byte)?;
        Ok(())
    }

    pub fn level_target(&self, level: usize) -> u64 {
        assert!(level >= 1);
        self.l1_target * self.level_ratio.pow(level as u32 - 1)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LsmError {
    #[error("block region has no free extent of {0} pages")]
    NoSpace(u64),
    #[error("unknown job")]
    UnknownJob,
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    /// Accepted; the writer must sleep `delay_us` first (slowdown).
    Ack { delay_us: Micros },
    Blocked(StallReason),
}

/// Newest version found by a point lookup, with the reads it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Lookup {
    pub entry: Option<Entry>,
    pub probes: u32,
    pub transfers: Vec<(TransferId, Micros)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobId(u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Flush,
    Compaction { level: usize },
}

/// What a job needs before its next phase can run.
#[derive(Debug, Clone, PartialEq)]
pub enum JobStep {
    Transfers(Vec<(TransferId, Micros)>),
    /// Host CPU for `us` of wall time on `threads` workers.
    Cpu { us: Micros, threads: usize },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Read,
    Cpu,
    Write,
    Install,
}

#[derive(Debug, Clone)]
enum Work {
    Flush {
        imt: Arc<Vec<Entry>>,
        output: Option<SsTable>,
    },
    Compaction {
        level: usize,
        inputs: Vec<Arc<SsTable>>,
        overlaps: Vec<Arc<SsTable>>,
        outputs: Vec<SsTable>,
    },
}

#[derive(Debug, Clone)]
struct Job {
    phase: Phase,
    work: Work,
    /// Workers borrowed for the merge phase.
    threads: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LsmCounters {
    pub puts: u64,
    pub blocked: BTreeMap<StallReason, u64>,
    pub slowdowns: u64,
    pub flushes: u64,
    pub flush_bytes: u64,
    pub compactions: u64,
    pub compaction_read_bytes: u64,
    pub compaction_write_bytes: u64,
    pub cpu_us: Micros,
    pub gets: u64,
    pub probes: u64,
}

/// Source level, its input tables, and the overlapping tables one level down.
type Pick = (usize, Vec<Arc<SsTable>>, Vec<Arc<SsTable>>);

#[derive(Debug, Clone)]
pub struct MainLsm {
    cfg: LsmConfig,
    page_size: u64,
    active: Memtable,
    /// Newest first.
    imts: Vec<Arc<Vec<Entry>>>,
    /// Level 0 is newest first; deeper levels are sorted by key.
    levels: Vec<Vec<Arc<SsTable>>>,
    level_bytes: Vec<u64>,
    extents: ExtentAllocator,
    busy: BTreeSet<u64>,
    jobs: BTreeMap<JobId, Job>,
    flushing: bool,
    l0_compacting: bool,
    compactions_running: usize,
    borrowed_workers: usize,
    /// Deepest output level of each running compaction.
    output_levels: BTreeMap<JobId, usize>,
    next_job: u64,
    next_sst: u64,
    /// Per-level key where the next compaction pick starts.
    cursors: Vec<Option<Bytes>>,
    counters: LsmCounters,
}

impl MainLsm {
    pub fn new(cfg: LsmConfig, dev: &HybridDevice) -> Self {
        let n = cfg.num_levels;
        Self {
            page_size: dev.space().page_size,
            extents: ExtentAllocator::new(dev.space().block_pages()),
            active: Memtable::default(),
            imts: Vec::new(),
            levels: vec![Vec::new(); n],
            level_bytes: vec![0; n],
            busy: BTreeSet::new(),
            jobs: BTreeMap::new(),
            flushing: false,
            l0_compacting: false,
            compactions_running: 0,
            borrowed_workers: 0,
            output_levels: BTreeMap::new(),
            next_job: 0,
            next_sst: 0,
            cursors: vec![None; n],
            counters: LsmCounters::default(),
            cfg,
        }
    }

    pub fn config(&self) -> &LsmConfig {
        &self.cfg
    }

    pub fn counters(&self) -> &LsmCounters {
        &self.counters
    }

    pub fn memtable(&self) -> &Memtable {
        &self.active
    }

    pub fn imt_count(&self) -> usize {
        self.imts.len()
    }

    pub fn level(&self, n: usize) -> &[Arc<SsTable>] {
        &self.levels[n]
    }

    pub fn level_bytes(&self, n: usize) -> u64 {
        self.level_bytes[n]
    }

    pub fn running_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_flushing(&self) -> bool {
        self.flushing
    }

    /// Block extents currently owned by SSTs.
    pub fn extents(&self) -> Vec<(u64, u64)> {
        self.levels
            .iter()
            .flatten()
            .map(|t| (t.extent_start, t.extent_pages))
            .collect()
    }

    pub fn pending_compaction_bytes(&self) -> u64 {
        let mut pending = 0;
        if self.levels[0].len() >= self.cfg.l0_compaction_trigger {
            pending += self.level_bytes[0];
        }
        for n in 1..self.cfg.num_levels - 1 {
            pending += self.level_bytes[n].saturating_sub(self.cfg.level_target(n));
        }
        pending
    }

    pub fn stall_status(&self) -> StallStatus {
        StallStatus::evaluate(
            &self.cfg,
            self.levels[0].len(),
            self.imts.len(),
            self.pending_compaction_bytes(),
        )
    }

    /// Inserts into the active memtable, rotating it first if the entry would
    /// overflow it.
    pub fn put_local(&mut self, entry: Entry) -> PutOutcome {
        let status = self.stall_status();
        if let Some(reason) = status.stop_reason() {
            *self.counters.blocked.entry(reason).or_default() += 1;
            return PutOutcome::Blocked(reason);
        }
        let delay_us = if self.cfg.policy == WritePolicy::Slowdown && status.verdict == Verdict::Slowdown {
            self.counters.slowdowns += 1;
            self.cfg.slowdown_sleep_us
        } else {
            0
        };
        if self.active.would_overflow(&entry, self.cfg.memtable_bytes) {
            self.rotate();
        }
        self.active.insert(entry);
        self.counters.puts += 1;
        PutOutcome::Ack { delay_us }
    }

    /// Freezes the active memtable. No-op when it is empty.
    pub fn rotate(&mut self) {
        if !self.active.is_empty() {
            let frozen = std::mem::take(&mut self.active).freeze();
            self.imts.insert(0, Arc::new(frozen));
        }
    }

    /// Newest version of `key` (tombstones included), charging block reads
    /// for every SST probed.
    pub fn get_local(&mut self, key: &[u8], dev: &mut HybridDevice) -> Result<Lookup, LsmError> {
        self.counters.gets += 1;
        let mut transfers = Vec::new();
        let mut probes = 0;
        let found = self.lookup(key, dev.media(), |t, i| {
            probes += 1;
            let (lba, pages) = match i {
                Some(i) => t.record_pages(i, self.page_size),
                None => (t.extent_start, 1),
            };
            transfers.push((lba, pages));
        });
        self.counters.probes += probes as u64;
        let transfers = transfers
            .into_iter()
            .map(|(lba, pages)| dev.charge_block_read(lba, pages * self.page_size))
            .collect::<Result<_, _>>()?;
        Ok(Lookup {
            entry: found,
            probes,
            transfers,
        })
    }

    /// Newest version of `key` without charging anything.
    pub fn latest(&self, key: &[u8], media: &PageStore) -> Option<Entry> {
        self.lookup(key, media, |_, _| {})
    }

    fn lookup(&self, key: &[u8], media: &PageStore, mut probe: impl FnMut(&SsTable, Option<usize>)) -> Option<Entry> {
        if let Some(e) = self.active.get(key) {
            return Some(e.clone());
        }
        for imt in &self.imts {
            if let Ok(i) = imt.binary_search_by(|e| e.key.as_ref().cmp(key)) {
                return Some(imt[i].clone());
            }
        }
        for t in &self.levels[0] {
            if t.run.covers(key) {
                let hit = t.run.find(key);
                probe(t, hit);
                if let Some(i) = hit {
                    return Some(t.run.read(i, media));
                }
            }
        }
        for level in &self.levels[1..] {
            let idx = level.partition_point(|t| t.max_key().as_ref() < key);
            if let Some(t) = level.get(idx).filter(|t| t.run.covers(key)) {
                let hit = t.run.find(key);
                probe(t, hit);
                if let Some(i) = hit {
                    return Some(t.run.read(i, media));
                }
            }
        }
        None
    }

    /// Merge cursor over every component, newest first. Tombstones included.
    pub fn cursor(&self) -> MergeCursor {
        let mut sources = vec![Source::mem(Arc::new(self.active.snapshot()))];
        sources.extend(self.imts.iter().cloned().map(Source::mem));
        sources.extend(self.levels[0].iter().map(|t| Source::run(t.run.clone())));
        for level in &self.levels[1..] {
            sources.push(Source::level(level.iter().map(|t| t.run.clone()).collect()));
        }
        MergeCursor::new(sources)
    }

    /// Visible key-value pairs, uncharged.
    pub fn visible(&self, media: &PageStore) -> BTreeMap<Bytes, Bytes> {
        let mut c = self.cursor();
        std::iter::from_fn(|| c.next_entry(media))
            .filter(|e| !e.tombstone)
            .map(|e| (e.key, e.value))
            .collect()
    }

    fn new_job(&mut self, work: Work, phase: Phase) -> JobId {
        let id = JobId(self.next_job);
        self.next_job += 1;
        self.jobs.insert(id, Job { phase, work, threads: 1 });
        id
    }

    pub fn job_kind(&self, id: JobId) -> Option<JobKind> {
        self.jobs.get(&id).map(|j| match &j.work {
            Work::Flush { .. } => JobKind::Flush,
            Work::Compaction { level, .. } => JobKind::Compaction { level: *level },
        })
    }

    /// Starts flushing the oldest immutable memtable if no flush is running.
    pub fn start_flush(&mut self) -> Option<JobId> {
        if self.flushing {
            return None;
        }
        let imt = self.imts.last()?.clone();
        self.flushing = true;
        Some(self.new_job(Work::Flush { imt, output: None }, Phase::Cpu))
    }

    /// Starts the most urgent compaction a free worker can take.
    pub fn start_compaction(&mut self) -> Option<JobId> {
        if self.compactions_running + self.borrowed_workers >= self.cfg.compaction_workers {
            return None;
        }
        let (level, inputs, overlaps) = self.pick()?;
        for t in inputs.iter().chain(&overlaps) {
            self.busy.insert(t.id);
        }
        if level == 0 {
            self.l0_compacting = true;
        }
        self.compactions_running += 1;
        let id = self.new_job(
            Work::Compaction {
                level,
                inputs,
                overlaps,
                outputs: Vec::new(),
            },
            Phase::Read,
        );
        self.output_levels.insert(id, level + 1);
        Some(id)
    }

    /// Compaction scores: L0 by file count, deeper levels by size over target.
    pub fn scores(&self) -> Vec<f64> {
        let mut s = vec![self.levels[0].len() as f64 / self.cfg.l0_compaction_trigger as f64];
        for n in 1..self.cfg.num_levels - 1 {
            s.push(self.level_bytes[n] as f64 / self.cfg.level_target(n) as f64);
        }
        s
    }

    #[allow(clippy::type_complexity)]
    fn pick(&mut self) -> Option<(usize, Vec<Arc<SsTable>>, Vec<Arc<SsTable>>)> {
        let scores = self.scores();
        if scores[0] >= 1.0 && !self.l0_compacting {
            if let Some(p) = self.pick_l0() {
                return Some(p);
            }
        }
        let mut order: Vec<usize> = (1..scores.len()).filter(|&n| scores[n] >= 1.0).collect();
        // Highest score first; the stable sort keeps lower levels first on ties.
        order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
        order.into_iter().find_map(|n| self.pick_level(n))
    }

    fn overlapping(&self, level: usize, lo: &[u8], hi: &[u8]) -> Vec<Arc<SsTable>> {
        self.levels[level].iter().filter(|t| t.overlaps(lo, hi)).cloned().collect()
    }

    fn pick_l0(&self) -> Option<Pick> {
        let inputs: Vec<_> = self.levels[0].clone();
        if inputs.iter().any(|t| self.busy.contains(&t.id)) {
            return None;
        }
        let lo = inputs.iter().map(|t| t.min_key()).min()?.clone();
        let hi = inputs.iter().map(|t| t.max_key()).max()?.clone();
        let overlaps = self.overlapping(1, &lo, &hi);
        if overlaps.iter().any(|t| self.busy.contains(&t.id)) {
            return None;
        }
        Some((0, inputs, overlaps))
    }

    fn pick_level(&mut self, n: usize) -> Option<Pick> {
        let files = &self.levels[n];
        let start = match &self.cursors[n] {
            Some(k) => files.partition_point(|t| t.min_key() <= k),
            None => 0,
        };
        let len = files.len();
        for i in (0..len).map(|i| (start + i) % len) {
            let t = &files[i];
            if self.busy.contains(&t.id) {
                continue;
            }
            let overlaps = self.overlapping(n + 1, t.min_key(), t.max_key());
            if overlaps.iter().any(|o| self.busy.contains(&o.id)) {
                continue;
            }
            let t = t.clone();
            self.cursors[n] = Some(t.min_key().clone());
            return Some((n, vec![t], overlaps));
        }
        None
    }

    fn write_sst(&mut self, entries: &[Entry], level: usize, dev: &mut HybridDevice) -> Result<(SsTable, (TransferId, Micros)), LsmError> {
        let file = sst::encode_sst(entries).map_err(DeviceError::from)?;
        let pages = (file.len() as u64).div_ceil(self.page_size);
        let start = self.extents.allocate(pages).ok_or(LsmError::NoSpace(pages))?;
        let c = dev.block_write(start, &file)?;
        let id = self.next_sst;
        self.next_sst += 1;
        let table = SsTable::new(id, level, start, &file, self.page_size).map_err(DeviceError::from)?;
        Ok((table, c.transfers[0]))
    }

    fn release(&mut self, t: &SsTable, dev: &mut HybridDevice) -> Result<(), LsmError> {
        self.extents.release(t.extent_start, t.extent_pages);
        dev.block_trim(t.extent_start, t.extent_pages)?;
        Ok(())
    }

    /// Runs the next phase of a job.
    pub fn step(&mut self, id: JobId, dev: &mut HybridDevice) -> Result<JobStep, LsmError> {
        let mut job = self.jobs.remove(&id).ok_or(LsmError::UnknownJob)?;
        let step = match &mut job.work {
            Work::Flush { imt, output } => match job.phase {
                Phase::Cpu => {
                    let bytes: u64 = imt.iter().map(|e| e.charge()).sum();
                    let us = cpu_us(bytes, self.cfg.flush_cpu_ns_per_byte);
                    self.counters.cpu_us += us;
                    job.phase = Phase::Write;
                    JobStep::Cpu { us, threads: 1 }
                }
                Phase::Write => {
                    let imt = imt.clone();
                    let (table, t) = self.write_sst(&imt, 0, dev)?;
                    self.counters.flush_bytes += table.size;
                    *output = Some(table);
                    job.phase = Phase::Install;
                    JobStep::Transfers(vec![t])
                }
                Phase::Install => {
                    let table = output.take().expect("flush output written");
                    self.level_bytes[0] += table.size;
                    self.levels[0].insert(0, Arc::new(table));
                    let flushed = self.imts.pop().expect("flushed memtable present");
                    debug_assert!(Arc::ptr_eq(&flushed, imt));
                    self.flushing = false;
                    self.counters.flushes += 1;
                    return Ok(JobStep::Done);
                }
                Phase::Read => unreachable!("flushes start at the CPU phase"),
            },
            Work::Compaction {
                level,
                inputs,
                overlaps,
                outputs,
            } => match job.phase {
                Phase::Read => {
                    let mut ts = Vec::new();
                    for t in inputs.iter().chain(overlaps.iter()) {
                        ts.push(dev.charge_block_read(t.extent_start, t.size)?);
                        self.counters.compaction_read_bytes += t.size;
                    }
                    job.phase = Phase::Cpu;
                    if ts.is_empty() {
                        JobStep::Cpu { us: 0, threads: 1 }
                    } else {
                        JobStep::Transfers(ts)
                    }
                }
                Phase::Cpu => {
                    let bytes: u64 = inputs.iter().chain(overlaps.iter()).map(|t| t.size).sum();
                    let total = cpu_us(bytes, self.cfg.compaction_cpu_ns_per_byte);
                    self.counters.cpu_us += total;
                    // Idle workers split the merge into key-range subcompactions.
                    let idle = self.cfg.compaction_workers - self.compactions_running - self.borrowed_workers;
                    job.threads = 1 + idle;
                    self.borrowed_workers += idle;
                    job.phase = Phase::Write;
                    JobStep::Cpu {
                        us: total.div_ceil(job.threads as u64),
                        threads: job.threads,
                    }
                }
                Phase::Write => {
                    self.borrowed_workers -= job.threads - 1;
                    job.threads = 1;
                    let out_level = *level + 1;
                    let drop_tombstones = self.is_bottom(out_level, id) && dev.dev_lsm().is_empty();
                    let mut sources: Vec<Source> = inputs.iter().map(|t| Source::run(t.run.clone())).collect();
                    sources.push(Source::level(overlaps.iter().map(|t| t.run.clone()).collect()));
                    let mut cursor = MergeCursor::new(sources);
                    let mut batch = Vec::new();
                    let mut batch_bytes = 0;
                    let mut ts = Vec::new();
                    while let Some(e) = cursor.next_entry(dev.media()) {
                        if drop_tombstones && e.tombstone {
                            continue;
                        }
                        batch_bytes += crate::device::wire::record_len(&e) as u64;
                        batch.push(e);
                        if batch_bytes >= self.cfg.sst_target {
                            let (t, tr) = self.write_sst(&batch, out_level, dev)?;
                            outputs.push(t);
                            ts.push(tr);
                            batch.clear();
                            batch_bytes = 0;
                        }
                    }
                    if !batch.is_empty() {
                        let (t, tr) = self.write_sst(&batch, out_level, dev)?;
                        outputs.push(t);
                        ts.push(tr);
                    }
                    self.counters.compaction_write_bytes += outputs.iter().map(|t| t.size).sum::<u64>();
                    job.phase = Phase::Install;
                    if ts.is_empty() {
                        JobStep::Cpu { us: 0, threads: 1 }
                    } else {
                        JobStep::Transfers(ts)
                    }
                }
                Phase::Install => {
                    let level = *level;
                    let gone: BTreeSet<u64> = inputs.iter().chain(overlaps.iter()).map(|t| t.id).collect();
                    for n in [level, level + 1] {
                        self.levels[n].retain(|t| !gone.contains(&t.id));
                    }
                    for t in inputs.iter().chain(overlaps.iter()) {
                        self.busy.remove(&t.id);
                        self.level_bytes[t.level] -= t.size;
                    }
                    for t in inputs.iter().chain(overlaps.iter()) {
                        self.release(t, dev)?;
                    }
                    let target = &mut self.levels[level + 1];
                    for t in outputs.drain(..) {
                        self.level_bytes[level + 1] += t.size;
                        let at = target.partition_point(|x| x.min_key() < t.min_key());
                        target.insert(at, Arc::new(t));
                    }
                    if level == 0 {
                        self.l0_compacting = false;
                    }
                    self.compactions_running -= 1;
                    self.output_levels.remove(&id);
                    self.counters.compactions += 1;
                    return Ok(JobStep::Done);
                }
            },
        };
        self.jobs.insert(id, job);
        Ok(step)
    }

    /// True when nothing lives below `level` and no other job writes below it.
    fn is_bottom(&self, level: usize, job: JobId) -> bool {
        self.levels[level + 1..].iter().all(|l| l.is_empty())
            && self.output_levels.iter().all(|(j, &l)| *j == job || l <= level)
    }

    /// Runs a job to completion, draining the link after each transfer phase.
    pub fn run_job(&mut self, id: JobId, dev: &mut HybridDevice) -> Result<(), LsmError> {
        loop {
            match self.step(id, dev)? {
                JobStep::Transfers(_) => {
                    dev.drain();
                }
                JobStep::Cpu { .. } => {}
                JobStep::Done => return Ok(()),
            }
        }
    }

    /// Flushes every immutable memtable synchronously.
    pub fn flush_imts(&mut self, dev: &mut HybridDevice) -> Result<(), LsmError> {
        while let Some(j) = self.start_flush() {
            self.run_job(j, dev)?;
        }
        Ok(())
    }

    /// Runs flushes and compactions until no more are needed.
    pub fn settle(&mut self, dev: &mut HybridDevice) -> Result<(), LsmError> {
        loop {
            self.flush_imts(dev)?;
            match self.start_compaction() {
                Some(j) => self.run_job(j, dev)?,
                None => return Ok(()),
            }
        }
    }

    /// Rotates the active memtable and settles, leaving all data in SSTs.
    pub fn flush_all(&mut self, dev: &mut HybridDevice) -> Result<(), LsmError> {
        self.rotate();
        self.settle(dev)
    }

    /// Structural checks: sorted SSTs, disjoint levels, consistent byte
    /// counts and non-overlapping extents.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut extents = Vec::new();
        for (n, level) in self.levels.iter().enumerate() {
            let mut bytes = 0;
            for t in level {
                bytes += t.size;
                extents.push((t.extent_start, t.extent_pages));
                if t.level != n {
                    return Err(format!("SST {} recorded at level {} sits in level {n}", t.id, t.level));
                }
                for i in 1..t.run.len() {
                    if t.run.key(i - 1) >= t.run.key(i) {
                        return Err(format!("SST {} is not strictly sorted", t.id));
                    }
                }
            }
            if bytes != self.level_bytes[n] {
                return Err(format!("level {n} byte count drifted"));
            }
            if n >= 1 {
                for w in level.windows(2) {
                    if w[0].max_key() >= w[1].min_key() {
                        return Err(format!("level {n} SSTs {} and {} overlap", w[0].id, w[1].id));
                    }
                }
            }
        }
        extents.sort_unstable();
        for w in extents.windows(2) {
            if w[0].0 + w[0].1 > w[1].0 {
                return Err(format!("extents at {} and {} overlap", w[0].0, w[1].0));
            }
        }
        let used: u64 = extents.iter().map(|e| e.1).sum();
        let pending: u64 = self
            .jobs
            .values()
            .map(|j| match &j.work {
                Work::Flush { output, .. } => output.as_ref().map_or(0, |t| t.extent_pages),
                Work::Compaction { outputs, .. } => outputs.iter().map(|t| t.extent_pages).sum(),
            })
            .sum();
        if used + pending + self.extents.free_pages() != self.extents.total_pages() {
            return Err("block extent allocator leaked pages".into());
        }
        Ok(())
    }
}

fn cpu_us(bytes: u64, ns_per_byte: f64) -> Micros {
    (bytes as f64 * ns_per_byte / 1000.0).ceil() as Micros
}

#[cfg(test)]
mod tests;
