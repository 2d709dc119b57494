//! Workload driver and reporting.
//!
//! [`run`] plays a workload against a [`Store`](crate::accel::Store) in
//! virtual time and returns per-second samples plus a summary report.

mod driver;
mod metrics;
mod workload;

use std::path::Path;

pub use driver::{run, Run, RunError};
pub use metrics::{
    cdf_table, compare_table, percentile, read_csv, write_csv, Cdf, EmptyCdf, MetricsSample, Recorder, RunReport,
    CSV_SCHEMA,
};
pub use workload::{KeyGen, WorkloadKind, WorkloadSpec};

use crate::accel::{AccelConfig, Policy, RollbackMode};
use crate::device::DeviceConfig;
use crate::lsm::LsmConfig;
use crate::sim::{ConfigError, ConfigMap, Micros, SimConfig};

/// Host-side CPU time per operation.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HostCosts {
    pub put_us: Micros,
    /// Building and submitting a key-value command.
    pub redirect_us: Micros,
    pub get_us: Micros,
    pub range_entry_us: Micros,
}

impl Default for HostCosts {
    fn default() -> Self {
        Self {
            put_us: 700,
            redirect_us: 20,
            get_us: 100,
            range_entry_us: 2,
        }
    }
}

impl HostCosts {
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        map.get("host_put_us", &mut self.put_us)?;
        map.get("host_redirect_us", &mut self.redirect_us)?;
        map.get("host_get_us", &mut self.get_us)?;
        map.get("host_range_entry_us", &mut self.range_entry_us)?;
        Ok(())
    }
}

/// Everything one run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub accel: AccelConfig,
    pub lsm: LsmConfig,
    pub device: DeviceConfig,
    pub host: HostCosts,
}

impl RunConfig {
    /// Desk-scale defaults: hardware rates are scaled down about 40x so a
    /// 60 second run stays near 10^5 operations.
    pub fn preset(kind: WorkloadKind) -> Self {
        let sim = SimConfig {
            bus_capacity: 100_000_000,
            device_capacity: 30_000_000,
            compaction_cpu_ns_per_byte: SimConfig::balanced_cpu_cost(30_000_000),
            seed: 1,
        };
        let mut device = DeviceConfig {
            capacity: 512 << 20,
            sim,
            ..DeviceConfig::default()
        };
        device.dev_lsm.memtable_bytes = 4 << 20;
        device.costs.kv_op_us = 100;
        device.costs.probe_us = 200;
        let lsm = LsmConfig {
            memtable_bytes: 4 << 20,
            max_imts: 2,
            l0_compaction_trigger: 2,
            l0_slowdown: 4,
            l0_stop: 8,
            pending_soft: 32 << 20,
            pending_hard: 96 << 20,
            l1_target: 16 << 20,
            sst_target: 2 << 20,
            compaction_cpu_ns_per_byte: device.sim.compaction_cpu_ns_per_byte,
            compaction_workers: if kind == WorkloadKind::A { 1 } else { 4 },
            ..LsmConfig::default()
        };
        let mut accel = AccelConfig::default();
        if kind == WorkloadKind::A {
            // Write-only: device LSM maintenance off, rollback deferred to idle time.
            device.dev_lsm.flush_enabled = false;
            device.dev_lsm.compaction_enabled = false;
            accel.rollback_mode = RollbackMode::Lazy;
        }
        Self {
            workload: WorkloadSpec::new(kind),
            accel,
            lsm,
            device,
            host: HostCosts::default(),
        }
    }

    /// Applies a configuration file and rejects unknown keys.
    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        let kind = self.workload.kind;
        let mut probe = kind;
        map.get("workload", &mut probe)?;
        if probe != kind {
            *self = Self::preset(probe);
        }
        self.workload.apply(map)?;
        self.accel.apply(map)?;
        self.lsm.apply(map)?;
        self.device.apply(map)?;
        self.lsm.compaction_cpu_ns_per_byte = self.device.sim.compaction_cpu_ns_per_byte;
        self.host.apply(map)?;
        self.device.sim.seed = self.workload.seed;
        map.finish()
    }

    pub fn load(path: &Path, kind: WorkloadKind) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::preset(kind);
        cfg.apply(&ConfigMap::parse(&text)?)?;
        Ok(cfg)
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.accel.policy = policy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.workload.seed = seed;
        self.device.sim.seed = seed;
        self
    }

    pub fn with_workers(mut self, n: usize) -> Self {
        self.lsm.compaction_workers = n;
        self
    }

    pub fn with_rollback_mode(mut self, mode: RollbackMode) -> Self {
        self.accel.rollback_mode = mode;
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
