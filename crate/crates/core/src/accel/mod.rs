//! Write redirection between the host LSM and the device LSM.
//!
//! [`Store`] owns both trees, the metadata table, the global sequence
//! counter and the rollback state. Writes go to the host LSM unless it is
//! stalled, in which case they are redirected to the device. Rollback later
//! moves redirected data back in chunks.

mod detector;
mod metadata;
mod rollback;

use bytes::Bytes;

pub use detector::Detector;
pub use metadata::MetadataTable;
pub use rollback::{RollbackRun, RollbackState, RollbackStep};

use crate::device::{Completion, DeviceError, HybridDevice, Response};
use crate::entry::{Entry, SeqCounter};
use crate::lsm::{JobId, JobStep, LsmConfig, LsmError, MainLsm, PutOutcome, StallReason, StallStatus, Verdict, WritePolicy};
use crate::sim::{ConfigError, ConfigMap, Interconnect, Micros, TransferId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Policy {
    BaselineStall,
    BaselineSlowdown,
    KvAccel,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline-stall" => Ok(Policy::BaselineStall),
            "baseline-slowdown" => Ok(Policy::BaselineSlowdown),
            "kvaccel" => Ok(Policy::KvAccel),
            _ => Err(format!("unknown policy {s:?}")),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::BaselineStall => "baseline-stall",
            Policy::BaselineSlowdown => "baseline-slowdown",
            Policy::KvAccel => "kvaccel",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RollbackMode {
    Eager,
    Lazy,
}

impl std::str::FromStr for RollbackMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eager" => Ok(RollbackMode::Eager),
            "lazy" => Ok(RollbackMode::Lazy),
            _ => Err(format!("unknown rollback mode {s:?}")),
        }
    }
}

impl std::fmt::Display for RollbackMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RollbackMode::Eager => "eager",
            RollbackMode::Lazy => "lazy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelConfig {
    pub policy: Policy,
    pub rollback_mode: RollbackMode,
    pub detector_period_us: Micros,
    /// Quiet time (normal verdict, no writes) before a lazy rollback starts.
    pub lazy_quiet_us: Micros,
    pub redirect_on_slowdown: bool,
    /// Host CPU time to insert one rolled-back record.
    pub rollback_insert_us: Micros,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self {
            policy: Policy::KvAccel,
            rollback_mode: RollbackMode::Eager,
            detector_period_us: 100_000,
            lazy_quiet_us: 2_000_000,
            redirect_on_slowdown: false,
            rollback_insert_us: 2,
        }
    }
}

impl AccelConfig {
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        map.get("policy", &mut self.policy)?;
        map.get("rollback_mode", &mut self.rollback_mode)?;
        let mut ms = self.detector_period_us / 1000;
        map.get("detector_period_ms", &mut ms)?;
        self.detector_period_us = ms * 1000;
        map.get("lazy_quiet_us", &mut self.lazy_quiet_us)?;
        map.get_bool("redirect_on_slowdown", &mut self.redirect_on_slowdown)?;
        map.get("rollback_insert_us", &mut self.rollback_insert_us)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AccelError {
    #[error(transparent)]
    Lsm(#[from] LsmError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("rollback cannot start: {0}")]
    RollbackRefused(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Location {
    Main,
    Dev,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WriteOutcome {
    /// Accepted by the host LSM after an optional slowdown sleep.
    Main { seq: u64, delay_us: Micros },
    /// Redirected to the device.
    Dev { seq: u64, completion: Completion },
    Blocked(StallReason),
}

impl WriteOutcome {
    pub fn is_blocked(&self) -> bool {
        matches!(self, WriteOutcome::Blocked(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome {
    pub value: Option<Bytes>,
    pub source: Location,
    pub transfers: Vec<(TransferId, Micros)>,
    pub device_done: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct AccelCounters {
    pub writes_main: u64,
    pub writes_dev: u64,
    pub blocked: u64,
    pub device_full: u64,
    pub reads_main: u64,
    pub reads_dev: u64,
    pub rollbacks: u64,
    pub rollback_records: u64,
    pub rollback_skipped: u64,
    pub rollback_bytes: u64,
    pub rollback_pauses: u64,
    pub recoveries: u64,
}

#[derive(Debug, Clone)]
pub struct Store {
    cfg: AccelConfig,
    main: MainLsm,
    dev: HybridDevice,
    meta: MetadataTable,
    seq: SeqCounter,
    mutations: u64,
    incoming_writes: u64,
    detector: Detector,
    rollback: Option<RollbackState>,
    /// Drain the link after every operation (synchronous use).
    auto_drain: bool,
    counters: AccelCounters,
}

impl Store {
    pub fn new(cfg: AccelConfig, mut lsm: LsmConfig, dev: HybridDevice) -> Self {
        lsm.policy = match cfg.policy {
            Policy::BaselineSlowdown => WritePolicy::Slowdown,
            _ => WritePolicy::Stall,
        };
        Self {
            main: MainLsm::new(lsm, &dev),
            dev,
            meta: MetadataTable::default(),
            seq: SeqCounter::new(0),
            mutations: 0,
            incoming_writes: 0,
            detector: Detector::new(cfg.detector_period_us),
            rollback: None,
            auto_drain: true,
            counters: AccelCounters::default(),
            cfg,
        }
    }

    pub fn set_auto_drain(&mut self, on: bool) {
        self.auto_drain = on;
    }

    fn after_op(&mut self) {
        if self.auto_drain {
            self.dev.drain();
        }
    }

    pub fn config(&self) -> &AccelConfig {
        &self.cfg
    }

    pub fn main(&self) -> &MainLsm {
        &self.main
    }

    pub fn device(&self) -> &HybridDevice {
        &self.dev
    }

    pub fn metadata(&self) -> &MetadataTable {
        &self.meta
    }

    pub fn counters(&self) -> &AccelCounters {
        &self.counters
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn last_seq(&self) -> u64 {
        self.seq.last()
    }

    /// Bumped by every change visible to readers.
    pub fn mutations(&self) -> u64 {
        self.mutations
    }

    pub fn incoming_writes(&self) -> u64 {
        self.incoming_writes
    }

    pub fn stall_status(&self) -> StallStatus {
        self.main.stall_status()
    }

    pub fn start_flush(&mut self) -> Option<JobId> {
        self.main.start_flush()
    }

    pub fn start_compaction(&mut self) -> Option<JobId> {
        self.main.start_compaction()
    }

    /// Advances a host LSM job. Installing a job's output counts as a mutation
    /// because it releases the pages open iterators may point at.
    pub fn step_job(&mut self, job: JobId) -> Result<JobStep, AccelError> {
        let step = self.main.step(job, &mut self.dev)?;
        if step == JobStep::Done {
            self.mutations += 1;
        }
        Ok(step)
    }

    pub fn link_mut(&mut self) -> &mut Interconnect {
        self.dev.link_mut()
    }

    pub(crate) fn query_parts(&mut self) -> (&MainLsm, &mut HybridDevice, &MetadataTable) {
        (&self.main, &mut self.dev, &self.meta)
    }

    pub fn put(&mut self, key: impl Into<Bytes>, value: impl Into<Bytes>) -> Result<WriteOutcome, AccelError> {
        self.write(key.into(), Some(value.into()))
    }

    pub fn delete(&mut self, key: impl Into<Bytes>) -> Result<WriteOutcome, AccelError> {
        self.write(key.into(), None)
    }

    fn write(&mut self, key: Bytes, value: Option<Bytes>) -> Result<WriteOutcome, AccelError> {
        self.incoming_writes += 1;
        let status = self.main.stall_status();
        let redirect = self.cfg.policy == Policy::KvAccel
            && (status.verdict == Verdict::Stall || (self.cfg.redirect_on_slowdown && status.verdict == Verdict::Slowdown));
        let make = |seq| match &value {
            Some(v) => Entry::put(key.clone(), v.clone(), seq),
            None => Entry::delete(key.clone(), seq),
        };
        if redirect {
            let seq = self.seq.last() + 1;
            match self.dev.kv_put(make(seq)) {
                Ok(completion) => {
                    self.seq.issue();
                    self.meta.insert(key, seq);
                    self.mutations += 1;
                    self.counters.writes_dev += 1;
                    self.after_op();
                    return Ok(WriteOutcome::Dev { seq, completion });
                }
                Err(DeviceError::DeviceFull) => self.counters.device_full += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let seq = self.seq.last() + 1;
        match self.main.put_local(make(seq)) {
            PutOutcome::Ack { delay_us } => {
                self.seq.issue();
                if self.meta.get(&key).is_some() {
                    self.meta.remove(&key);
                }
                self.mutations += 1;
                self.counters.writes_main += 1;
                self.after_op();
                Ok(WriteOutcome::Main { seq, delay_us })
            }
            PutOutcome::Blocked(reason) => {
                self.counters.blocked += 1;
                Ok(WriteOutcome::Blocked(reason))
            }
        }
    }

    pub fn get(&mut self, key: &[u8]) -> Result<ReadOutcome, AccelError> {
        let on_dev = !self.dev.dev_lsm().is_empty() && self.meta.get(key).is_some();
        let out = if on_dev {
            self.counters.reads_dev += 1;
            let c = self.dev.kv_get(key)?;
            let Response::Value { entry, .. } = c.response else {
                unreachable!("kv_get answers with a value")
            };
            ReadOutcome {
                value: entry.and_then(|e| e.visible().cloned()),
                source: Location::Dev,
                transfers: c.transfers,
                device_done: c.device_done,
            }
        } else {
            self.counters.reads_main += 1;
            let l = self.main.get_local(key, &mut self.dev)?;
            ReadOutcome {
                value: l.entry.and_then(|e| e.visible().cloned()),
                source: Location::Main,
                transfers: l.transfers,
                device_done: self.dev.now(),
            }
        };
        self.after_op();
        Ok(out)
    }

    /// Snapshots the host LSM for the detector.
    pub fn detector_tick(&mut self, now: Micros) -> StallStatus {
        let s = self.main.stall_status();
        self.detector.observe(now, s, self.incoming_writes);
        s
    }

    /// Runs flushes and compactions to quiescence (synchronous use).
    pub fn settle(&mut self) -> Result<(), AccelError> {
        self.main.settle(&mut self.dev)?;
        self.mutations += 1;
        self.dev.drain();
        Ok(())
    }

    /// Moves every host memtable to SSTs and settles.
    pub fn flush_all(&mut self) -> Result<(), AccelError> {
        self.main.flush_all(&mut self.dev)?;
        self.mutations += 1;
        self.dev.drain();
        Ok(())
    }

    /// Host crash: the metadata table and rollback progress are lost. The
    /// host LSM and the device survive.
    pub fn simulate_crash(&mut self) {
        self.meta = MetadataTable::default();
        self.rollback = None;
        self.mutations += 1;
    }

    /// Rebuilds the metadata table from a full device scan. A device record
    /// is live when it is newer than anything the host LSM holds for its key.
    pub fn recover_metadata(&mut self) -> Result<usize, AccelError> {
        self.counters.recoveries += 1;
        let stream = self.dev.kv_scan_all()?;
        let mut decoder = crate::device::wire::ChunkDecoder::new();
        let mut meta = MetadataTable::default();
        for chunk in &stream.chunks {
            self.dev.deliver_chunk(chunk)?;
            for e in decoder.feed(chunk).map_err(DeviceError::from)? {
                let main_seq = self.main.latest(&e.key, self.dev.media()).map(|m| m.seq);
                if main_seq.is_none_or(|s| e.seq > s) {
                    meta.insert(e.key, e.seq);
                }
            }
        }
        decoder.finish().map_err(DeviceError::from)?;
        let (max_dev, max_main) = (
            self.dev.peek_all().iter().map(|e| e.seq).max().unwrap_or(0),
            self.seq.last(),
        );
        self.seq = SeqCounter::new(max_dev.max(max_main));
        self.meta = meta;
        self.mutations += 1;
        self.after_op();
        Ok(self.meta.len())
    }

    /// Checks that a key is in the metadata table exactly when the device
    /// holds a version newer than the host LSM's, and with that sequence.
    pub fn check_metadata(&self) -> Result<(), String> {
        let mut live = 0;
        for e in self.dev.peek_all() {
            let main_seq = self.main.latest(&e.key, self.dev.media()).map(|m| m.seq);
            let newer = main_seq.is_none_or(|s| e.seq > s);
            match (newer, self.meta.peek(&e.key)) {
                (true, Some(s)) if s == e.seq => live += 1,
                (false, None) => {}
                (newer, m) => {
                    return Err(format!(
                        "key {:?}: device seq {} host seq {main_seq:?} newer={newer} metadata {m:?}",
                        e.key, e.seq
                    ))
                }
            }
        }
        if live != self.meta.len() {
            return Err(format!("metadata has {} keys but only {live} are live on the device", self.meta.len()));
        }
        Ok(())
    }

    /// Newest visible value of `key` across both trees, uncharged.
    pub fn peek(&self, key: &[u8]) -> Option<Bytes> {
        let main = self.main.latest(key, self.dev.media());
        let dev = self.dev.peek_kv(key);
        let newest = match (main, dev) {
            (Some(m), Some(d)) => Some(if d.seq > m.seq { d } else { m }),
            (m, d) => m.or(d),
        };
        newest.and_then(|e| e.visible().cloned())
    }
}
