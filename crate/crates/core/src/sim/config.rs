//! `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored. Keys
//! are shared by every subsystem; each config struct picks the keys it knows
//! and [`ConfigMap::finish`] rejects the rest. Sizes accept `KiB`, `MiB`,
//! `GiB` (powers of two) and `KB`, `MB`, `GB` (powers of ten) suffixes.

use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("key `{key}` has invalid value `{value}`")]
    Invalid { key: String, value: String },
    #[error("unknown configuration key `{0}`")]
    Unknown(String),
    #[error("{0}")]
    Constraint(String),
}

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(v.as_str())
    }

    fn invalid(key: &str, value: &str) -> ConfigError {
        ConfigError::Invalid {
            key: key.to_string(),
            value: value.to_string(),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn get<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.raw(key) {
            *slot = v.parse().map_err(|_| Self::invalid(key, v))?;
        }
        Ok(())
    }

    pub fn get_bool(&self, key: &str, slot: &mut bool) -> Result<(), ConfigError> {
        if let Some(v) = self.raw(key) {
            *slot = match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "on" => true,
                "false" | "0" | "no" | "off" => false,
                _ => return Err(Self::invalid(key, v)),
            };
        }
        Ok(())
    }

    /// Like [`get`](Self::get) for byte sizes with optional unit suffix.
    pub fn get_size(&self, key: &str, slot: &mut u64) -> Result<(), ConfigError> {
        if let Some(v) = self.raw(key) {
            *slot = parse_size(v).ok_or_else(|| Self::invalid(key, v))?;
        }
        Ok(())
    }

    /// Errors on any key no subsystem consumed.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.entries.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(ConfigError::Unknown(k.clone())),
            None => Ok(()),
        }
    }
}

pub fn parse_size(v: &str) -> Option<u64> {
    let v = v.trim();
    let split = v.find(|c: char| !c.is_ascii_digit()).unwrap_or(v.len());
    let (num, unit) = v.split_at(split);
    let n: u64 = num.parse().ok()?;
    let mult = match unit.trim() {
        "" | "B" => 1,
        "KiB" => 1 << 10,
        "MiB" => 1 << 20,
        "GiB" => 1 << 30,
        "KB" => 1_000,
        "MB" => 1_000_000,
        "GB" => 1_000_000_000,
        _ => return None,
    };
    n.checked_mul(mult)
}

/// Settings owned by the simulation core.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Host bus capacity in bytes per second.
    pub bus_capacity: u64,
    /// Device media capacity in bytes per second.
    pub device_capacity: u64,
    /// Host CPU time of the compaction merge phase, in nanoseconds per input byte.
    pub compaction_cpu_ns_per_byte: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Merge CPU cost that makes transfers roughly half of a compaction: each
    /// input byte is read once and written once, so the CPU phase matches
    /// `2 / device_capacity` seconds per byte.
    pub fn balanced_cpu_cost(device_capacity: u64) -> f64 {
        2.0e9 / device_capacity as f64
    }

    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        map.get_size("bus_capacity", &mut self.bus_capacity)?;
        let before = self.device_capacity;
        map.get_size("device_capacity", &mut self.device_capacity)?;
        if before != self.device_capacity {
            self.compaction_cpu_ns_per_byte = Self::balanced_cpu_cost(self.device_capacity);
        }
        map.get("compaction_cpu_ns_per_byte", &mut self.compaction_cpu_ns_per_byte)?;
        map.get("seed", &mut self.seed)?;
        Ok(())
    }
}

impl Default for SimConfig {
    /// Full-scale hardware: 630 MB/s device behind a 4 GB/s bus.
    fn default() -> Self {
        Self {
            bus_capacity: 4_000_000_000,
            device_capacity: 630_000_000,
            compaction_cpu_ns_per_byte: Self::balanced_cpu_cost(630_000_000),
            seed: 1,
        }
    }
}
