use std::collections::BTreeMap;

use bytes::Bytes;

use crate::entry::Entry;

/// Active memtable. Size is the sum of entry charges (key + value + overhead).
#[derive(Debug, Clone, Default)]
pub struct Memtable {
    map: BTreeMap<Bytes, Entry>,
    bytes: u64,
}

impl Memtable {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn byte_size(&self) -> u64 {
        self.bytes
    }

    pub fn get(&self, key: &[u8]) -> Option<&Entry> {
        self.map.get(key)
    }

    /// Whether inserting `e` would push a non-empty memtable past `capacity`.
    pub fn would_overflow(&self, e: &Entry, capacity: u64) -> bool {
        let replaced = self.map.get(&e.key).map_or(0, Entry::charge);
        !self.map.is_empty() && self.bytes - replaced + e.charge() > capacity
    }

    pub fn insert(&mut self, e: Entry) {
        self.bytes += e.charge();
        if let Some(old) = self.map.insert(e.key.clone(), e) {
            self.bytes -= old.charge();
        }
    }

    pub fn snapshot(&self) -> Vec<Entry> {
        self.map.values().cloned().collect()
    }

    pub fn freeze(self) -> Vec<Entry> {
        self.map.into_values().collect()
    }
}
