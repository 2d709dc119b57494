//! Chunked rollback of redirected data into the host LSM.

use std::collections::VecDeque;

use super::{AccelError, Policy, RollbackMode, Store};
use crate::device::wire::ChunkDecoder;
use crate::device::{DeviceError, ScanStream};
use crate::entry::Entry;
use crate::lsm::{PutOutcome, Verdict};
use crate::sim::{Micros, TransferId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Fetch,
    Insert { fed: bool },
}

#[derive(Debug, Clone)]
pub struct RollbackState {
    stream: ScanStream,
    chunk: usize,
    phase: Phase,
    decoder: ChunkDecoder,
    pending: VecDeque<Entry>,
    merged: usize,
    skipped: usize,
    chunks_sent: usize,
    /// Highest sequence number delivered so far.
    high_seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RollbackStep {
    /// The device is serializing until the given time.
    Serialize(Micros),
    /// A chunk is on the link.
    Transfer(TransferId, Micros),
    /// Records went into the host LSM, using this much host CPU.
    Inserted { records: usize, cpu_us: Micros },
    /// The host LSM is stalled; progress is kept for the next attempt.
    Paused,
    Done { merged: usize, skipped: usize },
}

/// Result of a synchronous rollback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollbackRun {
    pub merged: usize,
    pub skipped: usize,
    pub chunks: usize,
    pub finished: bool,
}

impl RollbackState {
    fn new(stream: ScanStream) -> Self {
        Self {
            stream,
            chunk: 0,
            phase: Phase::Fetch,
            decoder: ChunkDecoder::new(),
            pending: VecDeque::new(),
            merged: 0,
            skipped: 0,
            chunks_sent: 0,
            high_seq: 0,
        }
    }

    fn rescan(&mut self, stream: ScanStream) {
        self.stream = stream;
        self.chunk = 0;
        self.phase = Phase::Fetch;
        self.decoder = ChunkDecoder::new();
        self.pending.clear();
    }
}

impl Store {
    pub fn rollback_in_progress(&self) -> bool {
        self.rollback.is_some()
    }

    fn stalled(&self) -> bool {
        let live = self.main.stall_status().verdict == Verdict::Stall;
        let seen = self.detector.last().is_some_and(|s| s.verdict == Verdict::Stall);
        live || seen
    }

    /// Whether the rollback scheduler should start or resume a rollback now.
    pub fn rollback_due(&self, now: Micros) -> bool {
        if self.cfg.policy != Policy::KvAccel || self.stalled() {
            return false;
        }
        if self.rollback.is_some() {
            return true;
        }
        !self.dev.dev_lsm().is_empty()
            && match self.cfg.rollback_mode {
                RollbackMode::Eager => true,
                RollbackMode::Lazy => self.detector.quiet_for(now) >= self.cfg.lazy_quiet_us,
            }
    }

    /// Scans the whole device range and prepares to stream it back.
    pub fn rollback_begin(&mut self) -> Result<RollbackStep, AccelError> {
        if self.rollback.is_some() {
            return Err(AccelError::RollbackRefused("a rollback is already running"));
        }
        if self.main.stall_status().verdict == Verdict::Stall {
            return Err(AccelError::RollbackRefused("host LSM is stalled"));
        }
        if self.dev.dev_lsm().is_empty() {
            return Ok(RollbackStep::Done { merged: 0, skipped: 0 });
        }
        let stream = self.dev.kv_scan_all()?;
        let ready = stream.ready_at;
        self.rollback = Some(RollbackState::new(stream));
        self.counters.rollbacks += 1;
        Ok(RollbackStep::Serialize(ready))
    }

    pub fn rollback_step(&mut self) -> Result<RollbackStep, AccelError> {
        let mut st = self
            .rollback
            .take()
            .ok_or(AccelError::RollbackRefused("no rollback is running"))?;
        let step = self.advance_rollback(&mut st);
        if !matches!(step, Ok(RollbackStep::Done { .. })) {
            self.rollback = Some(st);
        }
        step
    }

    fn advance_rollback(&mut self, st: &mut RollbackState) -> Result<RollbackStep, AccelError> {
        match st.phase {
            Phase::Fetch => {
                if st.chunk == st.stream.chunks.len() {
                    if self.dev.generation() != st.stream.generation {
                        // Writes were redirected while paused; fetch only those.
                        st.rescan(self.dev.kv_scan_newer(st.high_seq + 1)?);
                        return Ok(RollbackStep::Serialize(st.stream.ready_at));
                    }
                    self.dev.kv_reset()?;
                    self.meta.clear();
                    self.mutations += 1;
                    self.after_op();
                    return Ok(RollbackStep::Done {
                        merged: st.merged,
                        skipped: st.skipped,
                    });
                }
                if self.main.stall_status().verdict == Verdict::Stall {
                    self.counters.rollback_pauses += 1;
                    return Ok(RollbackStep::Paused);
                }
                let chunk = &st.stream.chunks[st.chunk];
                let (id, at) = self.dev.deliver_chunk(chunk)?;
                self.counters.rollback_bytes += chunk.len() as u64;
                st.chunks_sent += 1;
                st.phase = Phase::Insert { fed: false };
                Ok(RollbackStep::Transfer(id, at))
            }
            Phase::Insert { fed } => {
                if !fed {
                    let records = st.decoder.feed(&st.stream.chunks[st.chunk]).map_err(DeviceError::from)?;
                    st.high_seq = records.iter().map(|e| e.seq).fold(st.high_seq, u64::max);
                    st.pending.extend(records);
                    st.phase = Phase::Insert { fed: true };
                }
                let mut inserted = 0;
                while let Some(e) = st.pending.front() {
                    if self.meta.peek(&e.key) != Some(e.seq) {
                        // A newer version reached the host LSM after redirection.
                        st.skipped += 1;
                        self.counters.rollback_skipped += 1;
                        st.pending.pop_front();
                        continue;
                    }
                    match self.main.put_local(e.clone()) {
                        PutOutcome::Ack { .. } => {
                            let e = st.pending.pop_front().expect("front exists");
                            self.meta.remove(&e.key);
                            st.merged += 1;
                            self.counters.rollback_records += 1;
                            inserted += 1;
                        }
                        PutOutcome::Blocked(_) => break,
                    }
                }
                if inserted > 0 {
                    self.mutations += 1;
                }
                if st.pending.is_empty() {
                    st.chunk += 1;
                    st.phase = Phase::Fetch;
                } else if inserted == 0 {
                    self.counters.rollback_pauses += 1;
                    return Ok(RollbackStep::Paused);
                }
                Ok(RollbackStep::Inserted {
                    records: inserted,
                    cpu_us: inserted as Micros * self.cfg.rollback_insert_us,
                })
            }
        }
    }

    /// Runs a rollback synchronously until it finishes or pauses.
    pub fn rollback_execute(&mut self) -> Result<RollbackRun, AccelError> {
        let mut step = match self.rollback {
            Some(_) => self.rollback_step()?,
            None => self.rollback_begin()?,
        };
        loop {
            match step {
                RollbackStep::Done { merged, skipped } => {
                    return Ok(RollbackRun {
                        merged,
                        skipped,
                        chunks: 0,
                        finished: true,
                    })
                }
                RollbackStep::Paused => {
                    let st = self.rollback.as_ref().expect("paused rollback keeps its state");
                    return Ok(RollbackRun {
                        merged: st.merged,
                        skipped: st.skipped,
                        chunks: st.chunks_sent,
                        finished: false,
                    });
                }
                _ => {
                    self.dev.drain();
                    let chunks = self.rollback.as_ref().map_or(0, |s| s.chunks_sent);
                    step = self.rollback_step()?;
                    if let RollbackStep::Done { merged, skipped } = step {
                        return Ok(RollbackRun {
                            merged,
                            skipped,
                            chunks,
                            finished: true,
                        });
                    }
                }
            }
        }
    }

    /// Number of chunks delivered so far by the running rollback.
    pub fn rollback_chunks_sent(&self) -> Option<usize> {
        self.rollback.as_ref().map(|s| s.chunks_sent)
    }
}
