use std::collections::BTreeMap;

use bytes::Bytes;

use super::metrics::{percentile, Recorder, RunReport};
use super::workload::{KeyGen, WorkloadKind};
use super::{MetricsSample, RunConfig};
use crate::accel::{AccelError, Location, RollbackStep, Store, WriteOutcome};
use crate::device::{DeviceError, HybridDevice};
use crate::lsm::{JobId, JobStep, Verdict};
use crate::query::{self, QueryError};
use crate::sim::{Direction, EventQueue, Interface, Micros, SimError, TransferId, MICROS_PER_SEC};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Output of one run.
#[derive(Debug)]
pub struct Run {
    pub report: RunReport,
    pub samples: Vec<MetricsSample>,
    pub store: Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Owner {
    Job(JobId),
    Write,
    Read,
    Range,
    Rollback,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    Write,
    WriteAck,
    Read,
    ReadAck,
    Range,
    RangeAck,
    Job(JobId),
    Tick,
    Rollback,
}

impl Owner {
    fn resume(self) -> Ev {
        match self {
            Owner::Job(j) => Ev::Job(j),
            Owner::Write => Ev::WriteAck,
            Owner::Read => Ev::ReadAck,
            Owner::Range => Ev::RangeAck,
            Owner::Rollback => Ev::Rollback,
        }
    }
}

#[derive(Debug)]
struct Pending {
    outstanding: usize,
    ready_at: Micros,
}

#[derive(Debug, Default)]
struct Writer {
    op: Option<(Bytes, Bytes)>,
    started: Micros,
    location: Option<Location>,
    blocked_since: Option<Micros>,
    blocked: bool,
    stopped: bool,
    stopped_at: Option<Micros>,
}

#[derive(Debug, Default)]
struct Reader {
    started: Micros,
    location: Option<Location>,
    bytes: u64,
    idle: bool,
}

#[derive(Debug, Default)]
struct Totals {
    writes: u64,
    writes_main: u64,
    writes_dev: u64,
    reads: u64,
    reads_main: u64,
    reads_dev: u64,
    reads_issued: u64,
    ranges: u64,
    ranges_issued: u64,
    user_bytes: u64,
    slowdowns: u64,
    blocked: u64,
    cpu_us: u64,
    stall_episodes: u64,
}

struct Driver {
    cfg: RunConfig,
    end: Micros,
    store: Store,
    queue: EventQueue<Ev>,
    owners: BTreeMap<TransferId, Owner>,
    pending: BTreeMap<Owner, Pending>,
    wgen: KeyGen,
    rgen: KeyGen,
    writer: Writer,
    reader: Reader,
    range_started: Micros,
    rollback_active: bool,
    recorder: Recorder,
    totals: Totals,
    write_lat: Vec<Micros>,
    read_lat: Vec<Micros>,
    last_verdict: Verdict,
    violation: Option<String>,
}

/// Plays the configured workload in virtual time.
pub fn run(cfg: &RunConfig) -> Result<Run, RunError> {
    let dev = HybridDevice::new(&cfg.device)?;
    let mut store = Store::new(cfg.accel.clone(), cfg.lsm.clone(), dev);
    store.set_auto_drain(false);
    let end = cfg.workload.duration_us;
    let mut d = Driver {
        end,
        store,
        queue: EventQueue::new(),
        owners: BTreeMap::new(),
        pending: BTreeMap::new(),
        wgen: KeyGen::new(&cfg.workload, 0),
        rgen: KeyGen::new(&cfg.workload, 1),
        writer: Writer::default(),
        reader: Reader {
            idle: true,
            ..Default::default()
        },
        range_started: 0,
        rollback_active: false,
        recorder: Recorder::new(end),
        totals: Totals::default(),
        write_lat: Vec::new(),
        read_lat: Vec::new(),
        last_verdict: Verdict::Normal,
        violation: None,
        cfg: cfg.clone(),
    };
    if end > 0 {
        d.queue.schedule(0, Ev::Write)?;
        d.queue.schedule(0, Ev::Tick)?;
    }
    d.event_loop()?;
    Ok(d.finish())
}

impl Driver {
    fn now(&self) -> Micros {
        self.queue.now()
    }

    fn event_loop(&mut self) -> Result<(), RunError> {
        while self.violation.is_none() {
            let tq = self.queue.peek_time();
            let tl = self.store.device().link().next_completion();
            let next = match (tq, tl) {
                (None, None) => break,
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) => a.min(b),
            };
            if next >= self.end {
                break;
            }
            if tl == Some(next) {
                self.queue.advance_clock(next);
                for (id, t) in self.store.link_mut().advance_to(next) {
                    self.transfer_done(id, t)?;
                }
                continue;
            }
            let fired = self.queue.pop_until(next).expect("peeked");
            // Remainder bytes can finish a transfer a microsecond before its estimate.
            for (id, t) in self.store.link_mut().advance_to(fired.time) {
                self.transfer_done(id, t)?;
            }
            self.handle(fired.event)?;
        }
        Ok(())
    }

    fn at(&self, t: Micros) -> Micros {
        t.max(self.now())
    }

    fn schedule(&mut self, t: Micros, ev: Ev) {
        let t = self.at(t);
        self.queue.schedule(t, ev).expect("not in the past");
    }

    fn wait(&mut self, owner: Owner, transfers: Vec<(TransferId, Micros)>, ready_at: Micros) {
        if transfers.is_empty() {
            self.schedule(ready_at, owner.resume());
            return;
        }
        for (id, _) in &transfers {
            self.owners.insert(*id, owner);
        }
        let prev = self.pending.insert(
            owner,
            Pending {
                outstanding: transfers.len(),
                ready_at,
            },
        );
        debug_assert!(prev.is_none(), "{owner:?} waits twice");
    }

    fn transfer_done(&mut self, id: TransferId, t: Micros) -> Result<(), RunError> {
        // Device-internal work and abandoned transfers have no owner.
        let Some(owner) = self.owners.remove(&id) else {
            return Ok(());
        };
        let p = self.pending.get_mut(&owner).expect("owner is pending");
        p.outstanding -= 1;
        if p.outstanding == 0 {
            let ready = p.ready_at.max(t);
            self.pending.remove(&owner);
            self.schedule(ready, owner.resume());
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<(), RunError> {
        match ev {
            Ev::Write => self.issue_write(),
            Ev::WriteAck => self.write_ack(),
            Ev::Read => self.issue_read(),
            Ev::ReadAck => self.read_ack(),
            Ev::Range => self.issue_range(),
            Ev::RangeAck => self.range_ack(),
            Ev::Job(j) => self.step_job(j),
            Ev::Tick => self.tick(),
            Ev::Rollback => self.step_rollback(),
        }
    }

    fn start_jobs(&mut self) {
        while let Some(j) = self.store.start_flush() {
            self.schedule(self.now(), Ev::Job(j));
        }
        while let Some(j) = self.store.start_compaction() {
            self.schedule(self.now(), Ev::Job(j));
        }
    }

    fn wake_writer(&mut self) {
        if self.writer.blocked {
            self.writer.blocked = false;
            self.schedule(self.now(), Ev::Write);
        }
    }

    fn stop_writer(&mut self) {
        if !self.writer.stopped {
            self.writer.stopped = true;
            self.writer.stopped_at = Some(self.now());
        }
    }

    fn issue_write(&mut self) -> Result<(), RunError> {
        if self.writer.stopped {
            return Ok(());
        }
        let now = self.now();
        let (key, value) = match self.writer.op.clone() {
            Some(op) => op,
            None => {
                let op = (self.wgen.key(), self.wgen.value());
                self.writer.op = Some(op.clone());
                self.writer.started = now;
                op
            }
        };
        let host = self.cfg.host.clone();
        match self.store.put(key, value)? {
            WriteOutcome::Main { delay_us, .. } => {
                if delay_us > 0 {
                    self.totals.slowdowns += 1;
                    if let Some(s) = self.recorder.at(now) {
                        s.slowdowns += 1;
                    }
                }
                self.writer.location = Some(Location::Main);
                self.end_blocked(now);
                self.schedule(now + host.put_us + delay_us, Ev::WriteAck);
            }
            WriteOutcome::Dev { completion, .. } => {
                self.writer.location = Some(Location::Dev);
                self.end_blocked(now);
                let ready = (now + host.redirect_us).max(completion.device_done);
                self.wait(Owner::Write, completion.transfers, ready);
            }
            WriteOutcome::Blocked(_) => {
                self.totals.blocked += 1;
                self.writer.blocked = true;
                self.writer.blocked_since.get_or_insert(now);
            }
        }
        self.start_jobs();
        if self.writer.blocked && self.store.main().running_jobs() == 0 {
            self.violation = Some(format!("writer blocked at {now}us with no background work"));
        }
        Ok(())
    }

    fn end_blocked(&mut self, now: Micros) {
        if let Some(since) = self.writer.blocked_since.take() {
            self.recorder.span(since, now, |s, us| s.blocked_us += us);
        }
    }

    fn write_ack(&mut self) -> Result<(), RunError> {
        let now = self.now();
        let (key, value) = self.writer.op.take().expect("write in flight");
        self.write_lat.push(now - self.writer.started);
        let t = &mut self.totals;
        t.writes += 1;
        t.user_bytes += (key.len() + value.len()) as u64;
        let dev = self.writer.location == Some(Location::Dev);
        if dev {
            t.writes_dev += 1;
        } else {
            t.writes_main += 1;
        }
        if let Some(s) = self.recorder.at(now) {
            s.writes += 1;
            if dev {
                s.writes_dev += 1;
            } else {
                s.writes_main += 1;
            }
        }
        let spec = self.cfg.workload.clone();
        let writes = self.totals.writes;
        if spec.max_writes.is_some_and(|m| writes >= m) {
            self.stop_writer();
        }
        if spec.kind == WorkloadKind::D && writes >= spec.preload_writes {
            self.stop_writer();
            if self.totals.ranges_issued == 0 && spec.range_queries > 0 {
                self.schedule(now, Ev::Range);
            }
        }
        if !self.writer.stopped {
            self.schedule(now, Ev::Write);
        }
        if self.reader.idle && self.read_allowed() {
            self.reader.idle = false;
            self.schedule(now, Ev::Read);
        }
        Ok(())
    }

    fn read_allowed(&self) -> bool {
        match self.cfg.workload.read_ratio() {
            Some((w, r)) => self.totals.reads_issued * w < self.totals.writes * r,
            None => false,
        }
    }

    fn issue_read(&mut self) -> Result<(), RunError> {
        let now = self.now();
        let key = self.rgen.key();
        self.totals.reads_issued += 1;
        let out = self.store.get(&key)?;
        self.reader.started = now;
        self.reader.location = Some(out.source);
        self.reader.bytes = (key.len() + out.value.as_ref().map_or(0, |v| v.len())) as u64;
        let host = match out.source {
            Location::Main => self.cfg.host.get_us,
            Location::Dev => self.cfg.host.redirect_us,
        };
        let ready = (now + host).max(out.device_done);
        self.wait(Owner::Read, out.transfers, ready);
        Ok(())
    }

    fn read_ack(&mut self) -> Result<(), RunError> {
        let now = self.now();
        self.read_lat.push(now - self.reader.started);
        let dev = self.reader.location == Some(Location::Dev);
        let t = &mut self.totals;
        t.reads += 1;
        t.user_bytes += self.reader.bytes;
        if dev {
            t.reads_dev += 1;
        } else {
            t.reads_main += 1;
        }
        if let Some(s) = self.recorder.at(now) {
            s.reads += 1;
            if dev {
                s.reads_dev += 1;
            } else {
                s.reads_main += 1;
            }
        }
        if self.read_allowed() {
            self.schedule(now, Ev::Read);
        } else {
            self.reader.idle = true;
        }
        Ok(())
    }

    fn issue_range(&mut self) -> Result<(), RunError> {
        let now = self.now();
        if self.totals.ranges_issued == 0 {
            self.range_started = now;
        }
        self.totals.ranges_issued += 1;
        let start = self.rgen.key();
        let r = query::range(&mut self.store, &start, self.cfg.workload.range_len)?;
        self.reader.started = now;
        self.reader.bytes = r.items.iter().map(|(k, v)| (k.len() + v.len()) as u64).sum();
        let ready = (now + self.cfg.host.range_entry_us * r.items.len() as Micros).max(r.device_done);
        self.wait(Owner::Range, r.transfers, ready);
        Ok(())
    }

    fn range_ack(&mut self) -> Result<(), RunError> {
        let now = self.now();
        self.read_lat.push(now - self.reader.started);
        self.totals.ranges += 1;
        self.totals.user_bytes += self.reader.bytes;
        if let Some(s) = self.recorder.at(now) {
            s.ranges += 1;
        }
        if self.totals.ranges_issued < self.cfg.workload.range_queries {
            self.schedule(now, Ev::Range);
        }
        Ok(())
    }

    fn step_job(&mut self, j: JobId) -> Result<(), RunError> {
        let now = self.now();
        match self.store.step_job(j)? {
            JobStep::Transfers(t) => self.wait(Owner::Job(j), t, now),
            JobStep::Cpu { us, threads } => {
                self.cpu(now, us, threads as u64);
                self.schedule(now + us, Ev::Job(j));
            }
            JobStep::Done => {
                self.start_jobs();
                self.wake_writer();
            }
        }
        Ok(())
    }

    fn cpu(&mut self, now: Micros, us: Micros, threads: u64) {
        self.totals.cpu_us += us * threads;
        self.recorder.span(now, now + us, |s, d| s.cpu_us += d * threads);
    }

    fn tick(&mut self) -> Result<(), RunError> {
        let now = self.now();
        let status = self.store.detector_tick(now);
        if status.verdict == Verdict::Stall && self.last_verdict != Verdict::Stall {
            self.totals.stall_episodes += 1;
        }
        self.last_verdict = status.verdict;
        if let Some(s) = self.recorder.at(now) {
            s.ticks += 1;
            match status.verdict {
                Verdict::Stall => s.stall_ticks += 1,
                Verdict::Slowdown => s.slowdown_ticks += 1,
                Verdict::Normal => {}
            }
        }
        if !self.rollback_active && self.store.rollback_due(now) {
            self.rollback_active = true;
            self.schedule(now, Ev::Rollback);
        }
        if self.store.detector().ticks.is_multiple_of(10) {
            if let Err(e) = self.store.main().check_invariants() {
                self.violation = Some(e);
            }
        }
        self.schedule(now + self.cfg.accel.detector_period_us, Ev::Tick);
        Ok(())
    }

    fn step_rollback(&mut self) -> Result<(), RunError> {
        let now = self.now();
        let step = if self.store.rollback_in_progress() {
            self.store.rollback_step()?
        } else {
            self.store.rollback_begin()?
        };
        match step {
            RollbackStep::Serialize(t) => self.schedule(t, Ev::Rollback),
            RollbackStep::Transfer(id, t) => self.wait(Owner::Rollback, vec![(id, t)], now),
            RollbackStep::Inserted { records, cpu_us } => {
                if let Some(s) = self.recorder.at(now) {
                    s.rollback_records += records as u64;
                }
                self.cpu(now, cpu_us, 1);
                self.start_jobs();
                self.schedule(now + cpu_us, Ev::Rollback);
            }
            RollbackStep::Paused | RollbackStep::Done { .. } => {
                self.rollback_active = false;
                self.start_jobs();
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Run {
        let samples = std::mem::take(&mut self.recorder).finish(self.store.device().link().ledger());
        if self.violation.is_none() {
            let s = &self.store;
            self.violation = s
                .main()
                .check_invariants()
                .and_then(|_| s.check_metadata())
                .and_then(|_| s.device().check_regions(&s.main().extents()))
                .err();
        }
        let cfg = &self.cfg;
        let t = &self.totals;
        let secs = cfg.workload.duration_us as f64 / MICROS_PER_SEC as f64;
        let per_s = |n: u64| if secs > 0.0 { n as f64 / secs } else { 0.0 };
        let workers = cfg.lsm.compaction_workers.max(1) as f64;
        let cpu_pct = if secs > 0.0 {
            t.cpu_us as f64 / (cfg.workload.duration_us as f64 * workers) * 100.0
        } else {
            0.0
        };
        let mb_per_s = per_s(t.user_bytes) / 1e6;
        let writer_until = self.writer.stopped_at.unwrap_or(cfg.workload.duration_us);
        let zero_write_intervals = samples
            .iter()
            .filter(|s| (s.interval + 1) * MICROS_PER_SEC <= writer_until && s.writes == 0)
            .count() as u64;
        let range_secs = (cfg.workload.duration_us.saturating_sub(self.range_started)) as f64 / MICROS_PER_SEC as f64;
        let ledger = self.store.device().link().ledger();
        let lane = |i| ledger.total(i, Direction::HostToDevice) + ledger.total(i, Direction::DeviceToHost);
        let c = self.store.counters();
        let report = RunReport {
            workload: cfg.workload.kind.to_string(),
            policy: cfg.accel.policy.to_string(),
            rollback_mode: cfg.accel.rollback_mode.to_string(),
            seed: cfg.workload.seed,
            compaction_workers: cfg.lsm.compaction_workers,
            duration_s: secs,
            writes: t.writes,
            writes_main: t.writes_main,
            writes_dev: t.writes_dev,
            reads: t.reads,
            reads_main: t.reads_main,
            reads_dev: t.reads_dev,
            ranges: t.ranges,
            write_ops_per_s: per_s(t.writes),
            read_ops_per_s: per_s(t.reads),
            range_ops_per_s: if t.ranges > 0 && range_secs > 0.0 {
                t.ranges as f64 / range_secs
            } else {
                0.0
            },
            avg_ops_per_s: per_s(t.writes + t.reads + t.ranges),
            avg_mb_per_s: mb_per_s,
            p99_write_us: percentile(&self.write_lat, 99.0),
            p99_read_us: percentile(&self.read_lat, 99.0),
            cpu_pct,
            efficiency: if cpu_pct > 0.0 { mb_per_s / cpu_pct } else { 0.0 },
            stall_episodes: t.stall_episodes,
            stall_intervals: samples.iter().filter(|s| s.is_stall()).count() as u64,
            zero_write_intervals,
            slowdowns: t.slowdowns,
            blocked_writes: t.blocked,
            rollbacks: c.rollbacks,
            rollback_records: c.rollback_records,
            rollback_bytes: c.rollback_bytes,
            block_bytes: lane(Interface::Block),
            kv_bytes: lane(Interface::Kv),
            main_read_fraction: if t.reads > 0 {
                t.reads_main as f64 / t.reads as f64
            } else {
                0.0
            },
            invariant_violation: self.violation.clone(),
        };
        Run {
            report,
            samples,
            store: self.store,
        }
    }
}
