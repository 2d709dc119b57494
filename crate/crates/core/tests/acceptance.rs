//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hybridkv::accel::{AccelConfig, Policy, RollbackMode, RollbackStep, Store, WriteOutcome};
use hybridkv::bench::{self, MetricsSample, RunConfig, RunReport, WorkloadKind};
use hybridkv::device::{wire, DeviceConfig, DevLsmConfig, HybridDevice};
use hybridkv::entry::Entry;
use hybridkv::lsm::{LsmConfig, Verdict};
use hybridkv::query;

const SEEDS: u64 = 10;

// Pinned tolerances.
const WALL_LIMIT: Duration = Duration::from_secs(30);
const MIN_SPEEDUP_W1: f64 = 1.10;
const MAX_INVERSION: f64 = 0.02;
const MAX_INVERSIONS: usize = 1;
const ORACLE_SEQUENCES: u64 = 1000;
const MAX_SEQUENCE_OPS: usize = 10_000;
const CHUNK_BYTES: usize = 524_288;
const CRASH_POINTS: u64 = 100;
const MIN_MAIN_READ_GAP: f64 = 0.10;
const MAX_WRITE_SPREAD: f64 = 0.10;
const IDLE_UTIL: f64 = 0.05;
const MIN_IDLE_MASS: f64 = 0.10;
const CDF_TOLERANCE: f64 = 0.02;

struct Verdicts(Vec<bool>);

impl Verdicts {
    fn record(&mut self, n: usize, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => {
                println!("criterion {n} ({name}): PASS {detail}");
                self.0.push(true);
            }
            Err(detail) => {
                println!("criterion {n} ({name}): FAIL {detail}");
                self.0.push(false);
            }
        }
    }
}

fn run(cfg: &RunConfig) -> bench::Run {
    let r = bench::run(cfg).expect("run");
    assert_eq!(r.report.invariant_violation, None, "invariant violation");
    r
}

fn preset(kind: WorkloadKind, policy: Policy, seed: u64) -> RunConfig {
    RunConfig::preset(kind).with_policy(policy).with_seed(seed)
}

fn no_write_halt(runs: &BTreeMap<(Policy, u64), (RunReport, Vec<MetricsSample>)>, walls: &[Duration]) -> Result<String, String> {
    let mut worst_wall = Duration::ZERO;
    let mut min_zero = u64::MAX;
    for seed in 1..=SEEDS {
        let (kv, kv_samples) = &runs[&(Policy::KvAccel, seed)];
        let (bs, bs_samples) = &runs[&(Policy::BaselineStall, seed)];
        let kv_zero = kv_samples.iter().filter(|s| s.writes == 0).count();
        let bs_zero = bs_samples.iter().filter(|s| s.writes == 0).count() as u64;
        if kv_samples.len() != 60 || kv_zero != 0 || kv.blocked_writes != 0 {
            return Err(format!(
                "seed {seed}: kvaccel {} intervals, {kv_zero} zero, {} blocked",
                kv_samples.len(),
                kv.blocked_writes
            ));
        }
        if bs_zero < 1 {
            return Err(format!("seed {seed}: baseline-stall has no zero-write interval ({} writes)", bs.writes));
        }
        min_zero = min_zero.min(bs_zero);
    }
    for w in walls {
        worst_wall = worst_wall.max(*w);
    }
    if worst_wall >= WALL_LIMIT {
        return Err(format!("slowest seed took {worst_wall:?}"));
    }
    Ok(format!(
        "{SEEDS} seeds: kvaccel 0 zero/0 blocked, baseline-stall min {min_zero} zero, slowest {:.1}s",
        worst_wall.as_secs_f64()
    ))
}

fn throughput_shape() -> Result<String, String> {
    let mut inversions = Vec::new();
    let mut min_w1 = f64::MAX;
    for seed in 1..=SEEDS {
        let ratios: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&w| {
                let kv = run(&preset(WorkloadKind::A, Policy::KvAccel, seed).with_workers(w)).report.writes;
                let sd = run(&preset(WorkloadKind::A, Policy::BaselineSlowdown, seed).with_workers(w)).report.writes;
                kv as f64 / sd as f64
            })
            .collect();
        if ratios[0] < MIN_SPEEDUP_W1 {
            return Err(format!("seed {seed}: w1 ratio {:.3}", ratios[0]));
        }
        min_w1 = min_w1.min(ratios[0]);
        for pair in ratios.windows(2) {
            let (gap_a, gap_b) = (pair[0] - 1.0, pair[1] - 1.0);
            if gap_b > gap_a {
                inversions.push((seed, (gap_b - gap_a) / pair[0]));
            }
        }
    }
    let worst = inversions.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    if inversions.len() > MAX_INVERSIONS || worst > MAX_INVERSION {
        return Err(format!("inversions {inversions:?}"));
    }
    Ok(format!(
        "min w1 ratio {min_w1:.2}, {} inversion(s), worst {:.2}%",
        inversions.len(),
        worst * 100.0
    ))
}

// Small synchronous store: nothing runs in the background, so writes without
// `settle` drive the host LSM into a stall.
fn small_store(dev_memtable: u64) -> Store {
    let dev = HybridDevice::new(&DeviceConfig {
        capacity: 64 << 20,
        dev_lsm: DevLsmConfig {
            memtable_bytes: dev_memtable,
            ..DevLsmConfig::default()
        },
        ..DeviceConfig::default()
    })
    .unwrap();
    let lsm = LsmConfig {
        memtable_bytes: 4 * 1024,
        l1_target: 16 * 1024,
        sst_target: 4 * 1024,
        pending_soft: 64 * 1024,
        pending_hard: 256 * 1024,
        ..LsmConfig::default()
    };
    Store::new(AccelConfig::default(), lsm, dev)
}

fn key(i: u32) -> Bytes {
    Bytes::from(format!("k{i:04}"))
}

/// Reference model: visible values plus where each key's newest version went.
#[derive(Default)]
struct Oracle {
    values: BTreeMap<Bytes, Bytes>,
    latest: BTreeMap<Bytes, (u64, bool)>,
    /// Keys with some version on the device since the last reset.
    on_dev: BTreeSet<Bytes>,
}

impl Oracle {
    fn apply(&mut self, k: Bytes, v: Option<Bytes>, out: &WriteOutcome) {
        let (seq, dev) = match out {
            WriteOutcome::Main { seq, .. } => (*seq, false),
            WriteOutcome::Dev { seq, .. } => (*seq, true),
            WriteOutcome::Blocked(r) => panic!("write halted: {r:?}"),
        };
        match v {
            Some(v) => self.values.insert(k.clone(), v),
            None => self.values.remove(&k),
        };
        if dev {
            self.on_dev.insert(k.clone());
        }
        self.latest.insert(k, (seq, dev));
    }

    fn expected_meta(&self) -> BTreeMap<Bytes, u64> {
        self.latest
            .iter()
            .filter(|(_, (_, dev))| *dev)
            .map(|(k, (s, _))| (k.clone(), *s))
            .collect()
    }

    /// (merged, skipped) a full rollback must report.
    fn expected_rollback(&self) -> (usize, usize) {
        let merged = self.on_dev.iter().filter(|k| self.latest[*k].1).count();
        (merged, self.on_dev.len() - merged)
    }

    fn rolled_back(&mut self) {
        self.on_dev.clear();
        for (_, dev) in self.latest.values_mut() {
            *dev = false;
        }
    }
}

fn random_write(s: &mut Store, o: &mut Oracle, rng: &mut ChaCha8Rng, keys: u32) {
    let k = key(rng.gen_range(0..keys));
    if rng.gen_bool(0.15) {
        let out = s.delete(k.clone()).unwrap();
        o.apply(k, None, &out);
    } else {
        let v = Bytes::from(vec![rng.gen::<u8>(); rng.gen_range(50..300)]);
        let out = s.put(k.clone(), v.clone()).unwrap();
        o.apply(k, Some(v), &out);
    }
}

/// Settles and rolls back until the device is empty, checking postconditions.
fn full_rollback(s: &mut Store, o: &mut Oracle) -> Result<(), String> {
    let (want_merged, want_skipped) = o.expected_rollback();
    let before = (s.counters().rollback_records, s.counters().rollback_skipped);
    loop {
        s.settle().unwrap();
        if s.rollback_execute().map_err(|e| e.to_string())?.finished {
            break;
        }
    }
    let merged = (s.counters().rollback_records - before.0) as usize;
    let skipped = (s.counters().rollback_skipped - before.1) as usize;
    o.rolled_back();
    if (merged, skipped) != (want_merged, want_skipped) {
        return Err(format!("merged/skipped {merged}/{skipped}, oracle {want_merged}/{want_skipped}"));
    }
    let dev = s.device();
    if !s.metadata().is_empty() || !dev.dev_lsm().is_empty() || dev.kv_allocator().free_pages() != dev.space().kv_pages() {
        return Err(format!(
            "after rollback: {} metadata entries, device empty {}, {} of {} kv pages free",
            s.metadata().len(),
            dev.dev_lsm().is_empty(),
            dev.kv_allocator().free_pages(),
            dev.space().kv_pages()
        ));
    }
    Ok(())
}

fn check_state(s: &mut Store, o: &Oracle, keys: u32) -> Result<(), String> {
    for i in 0..keys {
        let k = key(i);
        let got = s.get(&k).unwrap().value;
        if got.as_ref() != o.values.get(&k) {
            return Err(format!("get {k:?}: {got:?} vs {:?}", o.values.get(&k)));
        }
    }
    let all = query::range(s, b"", o.values.len() + 1).map_err(|e| e.to_string())?;
    let want: Vec<_> = o.values.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    if all.items != want {
        return Err(format!("full scan: {} items vs {}", all.items.len(), want.len()));
    }
    Ok(())
}

fn oracle_equivalence() -> Result<String, String> {
    const KEYS: u32 = 400;
    let mut total_ops = 0usize;
    let mut redirected = 0u64;
    for case in 0..ORACLE_SEQUENCES {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE + case);
        let len = 10f64.powf(rng.gen_range(0.0..4.0)).ceil() as usize;
        let len = len.min(MAX_SEQUENCE_OPS);
        let mut s = small_store(16 * 1024);
        let mut o = Oracle::default();
        for step in 0..len {
            let fail = |m: String| format!("sequence {case} op {step}: {m}");
            match rng.gen_range(0..100) {
                0..=54 => random_write(&mut s, &mut o, &mut rng, KEYS),
                55..=79 => {
                    let k = key(rng.gen_range(0..KEYS));
                    let got = s.get(&k).unwrap().value;
                    if got.as_ref() != o.values.get(&k) {
                        return Err(fail(format!("get {k:?}")));
                    }
                }
                80..=91 => {
                    let start = key(rng.gen_range(0..KEYS));
                    let n = rng.gen_range(0..32);
                    let got = query::range(&mut s, &start, n).map_err(|e| fail(e.to_string()))?;
                    let want: Vec<_> = o
                        .values
                        .range(start..)
                        .take(n + 1)
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect();
                    if got.items != want {
                        return Err(fail(format!("range of {n}: {} items vs {}", got.items.len(), want.len())));
                    }
                }
                // Ends a stall episode.
                92..=96 => s.settle().unwrap(),
                _ => {
                    if s.stall_status().verdict != Verdict::Stall {
                        full_rollback(&mut s, &mut o).map_err(fail)?;
                    }
                }
            }
        }
        total_ops += len;
        redirected += s.counters().writes_dev;
        full_rollback(&mut s, &mut o).map_err(|m| format!("sequence {case} final: {m}"))?;
        s.settle().unwrap();
        check_state(&mut s, &o, KEYS).map_err(|m| format!("sequence {case} final: {m}"))?;
    }
    if redirected == 0 {
        return Err("no write was ever redirected".into());
    }
    Ok(format!(
        "{ORACLE_SEQUENCES} sequences, {total_ops} ops, {redirected} redirected writes, 0 mismatches"
    ))
}

fn rollback_postconditions() -> Result<String, String> {
    let mut rollbacks = 0;
    let mut skipped = 0;
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0B + case);
        let mut s = small_store(8 * 1024);
        let mut o = Oracle::default();
        for _ in 0..rng.gen_range(1..6) {
            for _ in 0..rng.gen_range(50..600) {
                random_write(&mut s, &mut o, &mut rng, 200);
                if rng.gen_bool(0.01) {
                    s.settle().unwrap();
                }
            }
            // Overwrite part of the redirected keys on the host.
            s.settle().unwrap();
            for _ in 0..rng.gen_range(0..60) {
                random_write(&mut s, &mut o, &mut rng, 200);
            }
            skipped += o.expected_rollback().1;
            full_rollback(&mut s, &mut o).map_err(|m| format!("case {case}: {m}"))?;
            rollbacks += 1;
        }
    }
    if skipped == 0 {
        return Err("no stale key was exercised".into());
    }
    Ok(format!("{rollbacks} rollbacks, {skipped} stale keys skipped as predicted"))
}

/// Record size from the documented layout: u16 key length, key, u64 seq,
/// u8 flags, u32 value length, value.
fn wire_len(key: usize, value: usize) -> usize {
    2 + key + 8 + 1 + 4 + value
}

fn chunking() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut chunks_seen = 0;
    for case in 0..50 {
        let n = rng.gen_range(0..400);
        let mut entries: Vec<Entry> = (0..n)
            .map(|i| {
                let k = format!("r{i:05}");
                let len = match rng.gen_range(0..20) {
                    0 => rng.gen_range(CHUNK_BYTES..3 * CHUNK_BYTES),
                    1..=4 => 0,
                    _ => rng.gen_range(1..20_000),
                };
                if rng.gen_bool(0.1) {
                    Entry::delete(k, i as u64 + 1)
                } else {
                    Entry::put(k, vec![rng.gen::<u8>(); len], i as u64 + 1)
                }
            })
            .collect();
        let chunks = wire::pack(&entries).map_err(|e| e.to_string())?;
        if let Some(c) = chunks.iter().find(|c| c.len() > CHUNK_BYTES) {
            return Err(format!("case {case}: chunk of {} bytes", c.len()));
        }
        let mut back = wire::unpack(&chunks).map_err(|e| e.to_string())?;
        back.sort_by(|a, b| a.key.cmp(&b.key));
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        if back != entries {
            return Err(format!("case {case}: records differ after re-parse"));
        }
        chunks_seen += chunks.len();
    }

    // Rollback streams produced by the device.
    for case in 0..20 {
        let mut dev = HybridDevice::new(&DeviceConfig {
            capacity: 256 << 20,
            dev_lsm: DevLsmConfig {
                memtable_bytes: 64 * 1024,
                ..DevLsmConfig::default()
            },
            ..DeviceConfig::default()
        })
        .unwrap();
        let mut newest: BTreeMap<Bytes, Entry> = BTreeMap::new();
        for seq in 1..=rng.gen_range(1..3000u64) {
            let k = Bytes::from(format!("d{:04}", rng.gen_range(0..1500)));
            let e = if rng.gen_bool(0.1) {
                Entry::delete(k.clone(), seq)
            } else {
                Entry::put(k.clone(), vec![seq as u8; rng.gen_range(1..9000)], seq)
            };
            dev.kv_put(e.clone()).map_err(|e| e.to_string())?;
            newest.insert(k, e);
        }
        let stream = dev.kv_scan_all().map_err(|e| e.to_string())?;
        if let Some(c) = stream.chunks.iter().find(|c| c.len() > CHUNK_BYTES) {
            return Err(format!("device case {case}: chunk of {} bytes", c.len()));
        }
        let back = wire::unpack(&stream.chunks).map_err(|e| e.to_string())?;
        let want: Vec<Entry> = newest.into_values().collect();
        if back != want {
            return Err(format!("device case {case}: {} records vs {}", back.len(), want.len()));
        }
        chunks_seen += stream.chunks.len();
    }

    // 1 MiB of 4 KiB values under 4-byte keys.
    let rec = wire_len(4, 4096);
    let n = (1 << 20) / 4096;
    let per_chunk = CHUNK_BYTES / rec;
    let mut want_sizes = vec![per_chunk * rec; n / per_chunk];
    if n % per_chunk != 0 {
        want_sizes.push((n % per_chunk) * rec);
    }
    let entries: Vec<Entry> = (0..n as u32)
        .map(|i| Entry::put(i.to_be_bytes().to_vec(), vec![0xAB; 4096], i as u64 + 1))
        .collect();
    let sizes: Vec<usize> = wire::pack(&entries).map_err(|e| e.to_string())?.iter().map(Vec::len).collect();
    if sizes != want_sizes {
        return Err(format!("1 MiB packing {sizes:?}, predicted {want_sizes:?}"));
    }
    Ok(format!(
        "70 datasets, {chunks_seen} chunks all <= {CHUNK_BYTES} B; 1 MiB -> {} chunks of {:?} B",
        sizes.len(),
        sizes
    ))
}

fn metadata_recovery() -> Result<String, String> {
    let mut mid_rollback = 0;
    for case in 0..CRASH_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE + case);
        let mut s = small_store(8 * 1024);
        let mut o = Oracle::default();
        for _ in 0..rng.gen_range(100..1500) {
            random_write(&mut s, &mut o, &mut rng, 300);
            if rng.gen_bool(0.005) {
                s.settle().unwrap();
            }
        }
        let mut expected = o.expected_meta();
        if case % 2 == 1 && !s.device().dev_lsm().is_empty() {
            // Crash after a random number of rollback steps.
            s.settle().unwrap();
            let dev_keys: Vec<Bytes> = o.on_dev.iter().cloned().collect();
            let start = (s.counters().rollback_records, s.counters().rollback_skipped);
            let mut step = s.rollback_begin().map_err(|e| e.to_string())?;
            // Most datasets fit one chunk: serialize, transfer, insert, reset.
            for _ in 0..rng.gen_range(0..6) {
                match step {
                    RollbackStep::Done { .. } => break,
                    RollbackStep::Paused => s.settle().unwrap(),
                    _ => {}
                }
                step = s.rollback_step().map_err(|e| e.to_string())?;
            }
            if matches!(step, RollbackStep::Done { .. }) {
                o.rolled_back();
                expected.clear();
            } else {
                mid_rollback += 1;
                let processed = (s.counters().rollback_records - start.0 + s.counters().rollback_skipped - start.1) as usize;
                // The stream is in key order; processed records are now in the host LSM.
                for k in &dev_keys[..processed] {
                    expected.remove(k);
                }
            }
        }
        s.simulate_crash();
        s.recover_metadata().map_err(|e| e.to_string())?;
        let got: BTreeMap<Bytes, u64> = s.metadata().sorted().into_iter().collect();
        if got != expected {
            return Err(format!("crash {case}: recovered {} keys, expected {}", got.len(), expected.len()));
        }
        check_state(&mut s, &o, 300).map_err(|m| format!("crash {case} after recovery: {m}"))?;
        loop {
            s.settle().unwrap();
            if s.rollback_execute().map_err(|e| e.to_string())?.finished {
                break;
            }
        }
        check_state(&mut s, &o, 300).map_err(|m| format!("crash {case} after rollback: {m}"))?;
    }
    if mid_rollback < CRASH_POINTS / 4 {
        return Err(format!("only {mid_rollback} crashes landed mid-rollback"));
    }
    Ok(format!("{CRASH_POINTS} crash points ({mid_rollback} mid-rollback), tables and values match"))
}

fn eager_vs_lazy() -> Result<String, String> {
    let mut min_gap = f64::MAX;
    let mut max_spread: f64 = 0.0;
    for seed in 1..=SEEDS {
        let cfg = preset(WorkloadKind::B, Policy::KvAccel, seed);
        let eager = run(&cfg.clone().with_rollback_mode(RollbackMode::Eager)).report;
        let lazy = run(&cfg.with_rollback_mode(RollbackMode::Lazy)).report;
        let frac = |r: &RunReport| r.reads_main as f64 / r.reads as f64;
        let gap = frac(&eager) - frac(&lazy);
        let spread = (eager.writes as f64 - lazy.writes as f64).abs() / eager.writes.min(lazy.writes) as f64;
        if gap < MIN_MAIN_READ_GAP || spread > MAX_WRITE_SPREAD {
            return Err(format!(
                "seed {seed}: main-read {:.3} vs {:.3}, writes {} vs {}",
                frac(&eager),
                frac(&lazy),
                eager.writes,
                lazy.writes
            ));
        }
        min_gap = min_gap.min(gap);
        max_spread = max_spread.max(spread);
    }
    Ok(format!(
        "{SEEDS} seeds: min gap {:.1} pp, max write spread {:.1}%",
        min_gap * 100.0,
        max_spread * 100.0
    ))
}

/// Empirical CDF of device utilization over stall intervals.
fn stall_cdf(samples: &[MetricsSample]) -> Vec<f64> {
    let mut v: Vec<f64> = samples
        .iter()
        .filter(|s| s.ticks > 0 && 2 * s.stall_ticks >= s.ticks)
        .map(|s| s.device_util)
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

fn cdf_at(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&u| u <= x) as f64 / sorted.len() as f64
}

fn stall_utilization(runs: &BTreeMap<(Policy, u64), (RunReport, Vec<MetricsSample>)>) -> Result<String, String> {
    let pooled = |p: Policy| {
        let mut all: Vec<MetricsSample> = Vec::new();
        for seed in 1..=SEEDS {
            all.extend(runs[&(p, seed)].1.iter().cloned());
        }
        stall_cdf(&all)
    };
    let base = pooled(Policy::BaselineStall);
    let kv = pooled(Policy::KvAccel);
    if base.is_empty() || kv.is_empty() {
        return Err(format!("stall intervals: baseline {}, kvaccel {}", base.len(), kv.len()));
    }
    let idle = base.partition_point(|&u| u < IDLE_UTIL) as f64 / base.len() as f64;
    // Dominance up to the tolerance on both axes: F_kv(x) <= F_base(x + t) + t.
    let points = || base.iter().chain(&kv).copied();
    let crossing = points()
        .map(|x| cdf_at(&kv, x) - cdf_at(&base, x + CDF_TOLERANCE))
        .fold(0.0, f64::max);
    let vertical = points().map(|x| cdf_at(&kv, x) - cdf_at(&base, x)).fold(0.0, f64::max);
    if idle < MIN_IDLE_MASS || crossing > CDF_TOLERANCE {
        return Err(format!(
            "baseline mass below {IDLE_UTIL} = {idle:.3}, crossing {crossing:.3} (vertical only {vertical:.3})"
        ));
    }
    Ok(format!(
        "baseline {} stall intervals, {:.0}% below {IDLE_UTIL}; kvaccel {} intervals, crossing {crossing:.3} (vertical only {vertical:.3})",
        base.len(),
        idle * 100.0,
        kv.len()
    ))
}

fn determinism() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cases = [
        preset(WorkloadKind::A, Policy::KvAccel, 3),
        preset(WorkloadKind::B, Policy::KvAccel, 4),
        preset(WorkloadKind::C, Policy::BaselineSlowdown, 5),
        preset(WorkloadKind::D, Policy::KvAccel, 6),
    ];
    for (i, cfg) in cases.iter().enumerate() {
        let mut files = Vec::new();
        for rep in 0..2 {
            let path = dir.path().join(format!("{i}-{rep}.csv"));
            bench::write_csv(&path, &run(cfg).samples).map_err(|e| e.to_string())?;
            files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if files[0] != files[1] {
            return Err(format!("case {i} ({}) produced different CSV bytes", cfg.workload.kind));
        }
    }
    Ok(format!("{} configurations, byte-identical CSVs", cases.len()))
}

fn main() {
    let mut v = Verdicts(Vec::new());

    let mut runs = BTreeMap::new();
    let mut walls = Vec::new();
    for seed in 1..=SEEDS {
        let t = Instant::now();
        for p in [Policy::KvAccel, Policy::BaselineStall] {
            let r = run(&preset(WorkloadKind::A, p, seed));
            runs.insert((p, seed), (r.report, r.samples));
        }
        walls.push(t.elapsed());
    }

    v.record(1, "no write halt", no_write_halt(&runs, &walls));
    v.record(2, "throughput shape", throughput_shape());
    v.record(3, "oracle equivalence", oracle_equivalence());
    v.record(4, "rollback postconditions", rollback_postconditions());
    v.record(5, "chunking", chunking());
    v.record(6, "metadata recovery", metadata_recovery());
    v.record(7, "eager vs lazy", eager_vs_lazy());
    v.record(8, "stall utilization", stall_utilization(&runs));
    v.record(9, "determinism", determinism());

    let failed = v.0.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", v.0.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
