use bytes::Bytes;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sim::{ConfigError, ConfigMap, Micros, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum WorkloadKind {
    /// Random fill, one writer.
    A,
    /// One writer and one reader at 9:1.
    B,
    /// One writer and one reader at 8:2.
    C,
    /// Random fill, then seek plus `range_len` nexts.
    D,
}

impl std::str::FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(WorkloadKind::A),
            "B" | "b" => Ok(WorkloadKind::B),
            "C" | "c" => Ok(WorkloadKind::C),
            "D" | "d" => Ok(WorkloadKind::D),
            _ => Err(format!("unknown workload {s:?}")),
        }
    }
}

impl std::fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub key_size: usize,
    pub value_size: usize,
    pub duration_us: Micros,
    /// Stop issuing writes after this many acks.
    pub max_writes: Option<u64>,
    pub key_space: u64,
    pub seed: u64,
    /// Writes acked before range queries start (workload D).
    pub preload_writes: u64,
    pub range_len: usize,
    /// Range queries to issue after the preload (workload D).
    pub range_queries: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind) -> Self {
        Self {
            kind,
            key_size: 4,
            value_size: 4096,
            duration_us: 60 * MICROS_PER_SEC,
            max_writes: None,
            key_space: match kind {
                WorkloadKind::B | WorkloadKind::C => 6144,
                WorkloadKind::A | WorkloadKind::D => 16_384,
            },
            seed: 1,
            preload_writes: 20_000,
            range_len: 1024,
            range_queries: 200,
        }
    }

    /// Issued writes to issued reads, or `None` when there is no reader.
    pub fn read_ratio(&self) -> Option<(u64, u64)> {
        match self.kind {
            WorkloadKind::A | WorkloadKind::D => None,
            WorkloadKind::B => Some((9, 1)),
            WorkloadKind::C => Some((8, 2)),
        }
    }

    pub fn apply(&mut self, map: &ConfigMap) -> Result<(), ConfigError> {
        map.get("workload", &mut self.kind)?;
        map.get("key_size", &mut self.key_size)?;
        map.get("value_size", &mut self.value_size)?;
        let mut secs = self.duration_us / MICROS_PER_SEC;
        map.get("duration_s", &mut secs)?;
        self.duration_us = secs * MICROS_PER_SEC;
        let mut max = self.max_writes.unwrap_or(0);
        map.get("max_writes", &mut max)?;
        self.max_writes = (max > 0).then_some(max);
        map.get("key_space", &mut self.key_space)?;
        map.get("seed", &mut self.seed)?;
        map.get("preload_writes", &mut self.preload_writes)?;
        map.get("range_len", &mut self.range_len)?;
        map.get("range_queries", &mut self.range_queries)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.key_size < 4 {
            return Err(ConfigError::Constraint("key_size must be at least 4".into()));
        }
        if self.key_space == 0 || self.key_space > u32::MAX as u64 + 1 {
            return Err(ConfigError::Constraint("key_space must be in 1..=2^32".into()));
        }
        Ok(())
    }
}

/// Deterministic key and value source for one actor.
#[derive(Debug, Clone)]
pub struct KeyGen {
    rng: ChaCha8Rng,
    key_size: usize,
    key_space: u64,
    values: Vec<Bytes>,
}

impl KeyGen {
    /// `stream` separates actors that share a seed.
    pub fn new(spec: &WorkloadSpec, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let values = (0..16)
            .map(|_| {
                let mut v = vec![0u8; spec.value_size];
                rng.fill_bytes(&mut v);
                Bytes::from(v)
            })
            .collect();
        Self {
            rng,
            key_size: spec.key_size,
            key_space: spec.key_space,
            values,
        }
    }

    /// Big-endian index, left-padded with zeros to the key size.
    pub fn key_for(&self, index: u64) -> Bytes {
        let mut k = vec![0u8; self.key_size];
        let n = self.key_size;
        k[n - 4..].copy_from_slice(&(index as u32).to_be_bytes());
        // Index zero would be all zeros; still a non-empty key.
        Bytes::from(k)
    }

    pub fn key(&mut self) -> Bytes {
        let i = self.rng.gen_range(0..self.key_space);
        self.key_for(i)
    }

    pub fn value(&mut self) -> Bytes {
        let i = self.rng.gen_range(0..self.values.len());
        self.values[i].clone()
    }
}
