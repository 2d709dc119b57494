use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::BuildHasherDefault;

use bytes::Bytes;

/// Keys whose latest version lives in the device, with that version's sequence number.
/// Keys absent from the table are served by the host LSM.
#[derive(Debug, Clone, Default)]
pub struct MetadataTable {
    map: HashMap<Bytes, u64, BuildHasherDefault<DefaultHasher>>,
    pub inserts: u64,
    pub checks: u64,
    pub deletes: u64,
}

impl MetadataTable {
    pub fn insert(&mut self, key: Bytes, seq: u64) {
        self.inserts += 1;
        self.map.insert(key, seq);
    }

    pub fn remove(&mut self, key: &[u8]) -> Option<u64> {
        self.deletes += 1;
        self.map.remove(key)
    }

    pub fn get(&mut self, key: &[u8]) -> Option<u64> {
        self.checks += 1;
        self.map.get(key).copied()
    }

    /// Lookup without touching the counters.
    pub fn peek(&self, key: &[u8]) -> Option<u64> {
        self.map.get(key).copied()
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    /// Entries sorted by key.
    pub fn sorted(&self) -> Vec<(Bytes, u64)> {
        let mut v: Vec<_> = self.map.iter().map(|(k, s)| (k.clone(), *s)).collect();
        v.sort_unstable();
        v
    }
}
