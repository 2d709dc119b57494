use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{BandwidthLedger, Direction, Interface, Micros, MICROS_PER_SEC};

/// Column layout version of the per-interval CSV.
pub const CSV_SCHEMA: u32 = 1;

/// One virtual second.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub interval: u64,
    pub writes: u64,
    pub writes_main: u64,
    pub writes_dev: u64,
    pub reads: u64,
    pub reads_main: u64,
    pub reads_dev: u64,
    pub ranges: u64,
    pub slowdowns: u64,
    pub blocked_us: u64,
    pub ticks: u64,
    pub stall_ticks: u64,
    pub slowdown_ticks: u64,
    pub block_h2d: u64,
    pub block_d2h: u64,
    pub kv_h2d: u64,
    pub kv_d2h: u64,
    pub device_util: f64,
    pub cpu_us: u64,
    pub rollback_records: u64,
}

impl MetricsSample {
    /// At least half of the detector ticks in this second saw a stall.
    pub fn is_stall(&self) -> bool {
        self.ticks > 0 && self.stall_ticks * 2 >= self.ticks
    }
}

#[derive(Debug, Clone, Default)]
pub struct Recorder {
    samples: Vec<MetricsSample>,
}

impl Recorder {
    pub fn new(duration_us: Micros) -> Self {
        let n = duration_us.div_ceil(MICROS_PER_SEC);
        Self {
            samples: (0..n)
                .map(|i| MetricsSample {
                    interval: i,
                    ..Default::default()
                })
                .collect(),
        }
    }

    pub fn at(&mut self, t: Micros) -> Option<&mut MetricsSample> {
        self.samples.get_mut((t / MICROS_PER_SEC) as usize)
    }

    /// Splits `[start, end)` across interval boundaries.
    pub fn span(&mut self, start: Micros, end: Micros, mut f: impl FnMut(&mut MetricsSample, u64)) {
        let mut t = start;
        while t < end {
            let edge = (t / MICROS_PER_SEC + 1) * MICROS_PER_SEC;
            let upto = edge.min(end);
            match self.at(t) {
                Some(s) => f(s, upto - t),
                None => break,
            }
            t = upto;
        }
    }

    /// Copies interface byte counts from the link ledger.
    pub fn finish(mut self, ledger: &BandwidthLedger) -> Vec<MetricsSample> {
        for (i, s) in self.samples.iter_mut().enumerate() {
            s.block_h2d = ledger.interval_bytes(i, Interface::Block, Direction::HostToDevice);
            s.block_d2h = ledger.interval_bytes(i, Interface::Block, Direction::DeviceToHost);
            s.kv_h2d = ledger.interval_bytes(i, Interface::Kv, Direction::HostToDevice);
            s.kv_d2h = ledger.interval_bytes(i, Interface::Kv, Direction::DeviceToHost);
            s.device_util = ledger.device_utilization(i);
        }
        self.samples
    }
}

pub fn write_csv(path: &Path, samples: &[MetricsSample]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(Row::from(s))?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> io::Result<Vec<MetricsSample>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| row.map(MetricsSample::from).map_err(io::Error::other))
        .collect()
}

/// CSV form: utilization is printed with fixed precision so output is byte-stable.
#[derive(Debug, Serialize, Deserialize)]
struct Row {
    schema: u32,
    interval: u64,
    writes: u64,
    writes_main: u64,
    writes_dev: u64,
    reads: u64,
    reads_main: u64,
    reads_dev: u64,
    ranges: u64,
    slowdowns: u64,
    blocked_us: u64,
    ticks: u64,
    stall_ticks: u64,
    slowdown_ticks: u64,
    block_h2d: u64,
    block_d2h: u64,
    kv_h2d: u64,
    kv_d2h: u64,
    device_util: String,
    cpu_us: u64,
    rollback_records: u64,
}

impl From<&MetricsSample> for Row {
    fn from(s: &MetricsSample) -> Self {
        Row {
            schema: CSV_SCHEMA,
            interval: s.interval,
            writes: s.writes,
            writes_main: s.writes_main,
            writes_dev: s.writes_dev,
            reads: s.reads,
            reads_main: s.reads_main,
            reads_dev: s.reads_dev,
            ranges: s.ranges,
            slowdowns: s.slowdowns,
            blocked_us: s.blocked_us,
            ticks: s.ticks,
            stall_ticks: s.stall_ticks,
            slowdown_ticks: s.slowdown_ticks,
            block_h2d: s.block_h2d,
            block_d2h: s.block_d2h,
            kv_h2d: s.kv_h2d,
            kv_d2h: s.kv_d2h,
            device_util: format!("{:.6}", s.device_util),
            cpu_us: s.cpu_us,
            rollback_records: s.rollback_records,
        }
    }
}

impl From<Row> for MetricsSample {
    fn from(r: Row) -> Self {
        MetricsSample {
            interval: r.interval,
            writes: r.writes,
            writes_main: r.writes_main,
            writes_dev: r.writes_dev,
            reads: r.reads,
            reads_main: r.reads_main,
            reads_dev: r.reads_dev,
            ranges: r.ranges,
            slowdowns: r.slowdowns,
            blocked_us: r.blocked_us,
            ticks: r.ticks,
            stall_ticks: r.stall_ticks,
            slowdown_ticks: r.slowdown_ticks,
            block_h2d: r.block_h2d,
            block_d2h: r.block_d2h,
            kv_h2d: r.kv_h2d,
            kv_d2h: r.kv_d2h,
            device_util: r.device_util.parse().unwrap_or(0.0),
            cpu_us: r.cpu_us,
            rollback_records: r.rollback_records,
        }
    }
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[Micros], p: f64) -> Option<Micros> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Empirical distribution function.
#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    sorted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no stall intervals in input")]
pub struct EmptyCdf;

impl Cdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self, EmptyCdf> {
        if values.is_empty() {
            return Err(EmptyCdf);
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    /// Device utilization of the stall intervals in a run.
    pub fn of_stalls(samples: &[MetricsSample]) -> Result<Self, EmptyCdf> {
        Self::new(samples.iter().filter(|s| s.is_stall()).map(|s| s.device_util).collect())
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= x`.
    pub fn at(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Fraction of samples `< x`.
    pub fn below(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v < x) as f64 / self.sorted.len() as f64
    }

    /// `(x, F(x))` at each distinct sample.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &x in &self.sorted {
            if out.last().is_some_and(|(px, _)| *px == x) {
                continue;
            }
            out.push((x, self.at(x)));
        }
        out
    }

    /// Largest amount by which `self` lies above `other`. Zero or less means
    /// `self` first-order dominates `other` (its values are larger).
    pub fn max_excess_over(&self, other: &Cdf) -> f64 {
        self.sorted
            .iter()
            .chain(other.sorted.iter())
            .map(|&x| self.at(x) - other.at(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First-order dominance up to `tolerance` on both axes:
    /// `F_self(x) <= F_other(x + tolerance) + tolerance` for every `x`.
    pub fn dominates(&self, other: &Cdf, tolerance: f64) -> bool {
        self.sorted
            .iter()
            .chain(other.sorted.iter())
            .all(|&x| self.at(x) <= other.at(x + tolerance) + tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub workload: String,
    pub policy: String,
    pub rollback_mode: String,
    pub seed: u64,
    pub compaction_workers: usize,
    pub duration_s: f64,
    pub writes: u64,
    pub writes_main: u64,
    pub writes_dev: u64,
    pub reads: u64,
    pub reads_main: u64,
    pub reads_dev: u64,
    pub ranges: u64,
    pub write_ops_per_s: f64,
    pub read_ops_per_s: f64,
    pub range_ops_per_s: f64,
    pub avg_ops_per_s: f64,
    pub avg_mb_per_s: f64,
    pub p99_write_us: Option<Micros>,
    pub p99_read_us: Option<Micros>,
    /// Time in flush, compaction and rollback CPU phases per worker, in percent.
    pub cpu_pct: f64,
    pub efficiency: f64,
    pub stall_episodes: u64,
    pub stall_intervals: u64,
    pub zero_write_intervals: u64,
    pub slowdowns: u64,
    pub blocked_writes: u64,
    pub rollbacks: u64,
    pub rollback_records: u64,
    pub rollback_bytes: u64,
    pub block_bytes: u64,
    pub kv_bytes: u64,
    pub main_read_fraction: f64,
    pub invariant_violation: Option<String>,
}

impl RunReport {
    pub fn summary_lines(&self) -> Vec<String> {
        let opt = |v: Option<Micros>| v.map_or("-".to_string(), |v| v.to_string());
        vec![
            format!(
                "workload {} policy {} rollback {} seed {} workers {}",
                self.workload, self.policy, self.rollback_mode, self.seed, self.compaction_workers
            ),
            format!(
                "writes {} ({} host, {} device)  reads {} ({} host, {} device)  ranges {}",
                self.writes, self.writes_main, self.writes_dev, self.reads, self.reads_main, self.reads_dev, self.ranges
            ),
            format!(
                "throughput {:.1} ops/s {:.2} MB/s  p99 write {} us  p99 read {} us",
                self.avg_ops_per_s,
                self.avg_mb_per_s,
                opt(self.p99_write_us),
                opt(self.p99_read_us)
            ),
            format!(
                "cpu {:.2}% (flush/compaction/rollback CPU phases, not metered)  efficiency {:.3}",
                self.cpu_pct, self.efficiency
            ),
            format!(
                "stall episodes {}  stall intervals {}  zero-write intervals {}  slowdowns {}  blocked {}",
                self.stall_episodes, self.stall_intervals, self.zero_write_intervals, self.slowdowns, self.blocked_writes
            ),
            format!(
                "rollbacks {} ({} records, {} bytes)  block bytes {}  kv bytes {}",
                self.rollbacks, self.rollback_records, self.rollback_bytes, self.block_bytes, self.kv_bytes
            ),
        ]
    }
}

/// Side-by-side comparison against the first report.
pub fn compare_table(reports: &[RunReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<4} {:<18} {:<6} {:>7} {:>10} {:>9} {:>9} {:>10} {:>10} {:>7} {:>9}\n",
        "wl", "policy", "mode", "workers", "writes", "delta%", "MB/s", "p99w_us", "effic.", "zeros", "slowdowns"
    ));
    let base = reports.first().map(|r| r.writes as f64).unwrap_or(0.0);
    for r in reports {
        let delta = if base > 0.0 { (r.writes as f64 / base - 1.0) * 100.0 } else { 0.0 };
        out.push_str(&format!(
            "{:<4} {:<18} {:<6} {:>7} {:>10} {:>9.1} {:>9.2} {:>10} {:>10.3} {:>7} {:>9}\n",
            r.workload,
            r.policy,
            r.rollback_mode,
            r.compaction_workers,
            r.writes,
            delta,
            r.avg_mb_per_s,
            r.p99_write_us.map_or("-".to_string(), |v| v.to_string()),
            r.efficiency,
            r.zero_write_intervals,
            r.slowdowns
        ));
    }
    out
}

pub fn cdf_table(cdf: &Cdf) -> String {
    let mut out = String::from("utilization,cdf\n");
    for (x, f) in cdf.points() {
        out.push_str(&format!("{x:.6},{f:.6}\n"));
    }
    out
}
