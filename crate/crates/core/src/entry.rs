use std::cmp::Ordering;

use bytes::Bytes;

/// Fixed per-entry accounting overhead (sequence number plus length fields).
pub const ENTRY_OVERHEAD: u64 = 16;

/// A versioned key-value record. Deletes are tombstones with an empty value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entry {
    pub key: Bytes,
    pub value: Bytes,
    pub seq: u64,
    pub tombstone: bool,
}

impl Entry {
    pub fn put(key: impl Into<Bytes>, value: impl Into<Bytes>, seq: u64) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
            seq,
            tombstone: false,
        }
    }

    pub fn delete(key: impl Into<Bytes>, seq: u64) -> Self {
        Self {
            key: key.into(),
            value: Bytes::new(),
            seq,
            tombstone: true,
        }
    }

    /// Bytes charged against memtable capacity.
    pub fn charge(&self) -> u64 {
        (self.key.len() + self.value.len()) as u64 + ENTRY_OVERHEAD
    }

    /// The visible value, `None` for tombstones.
    pub fn visible(&self) -> Option<&Bytes> {
        (!self.tombstone).then_some(&self.value)
    }

    /// Key order, newest version first among equal keys.
    pub fn cmp_key_newest(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key).then(other.seq.cmp(&self.seq))
    }
}

/// Issues strictly increasing sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct SeqCounter(u64);

impl SeqCounter {
    pub fn new(start: u64) -> Self {
        Self(start)
    }

    pub fn issue(&mut self) -> u64 {
        self.0 += 1;
        self.0
    }

    pub fn last(&self) -> u64 {
        self.0
    }
}

/// Collapses a key-sorted stream (newest first among equal keys) to one
/// entry per key.
pub fn dedup_newest(sorted: impl IntoIterator<Item = Entry>) -> Vec<Entry> {
    let mut out: Vec<Entry> = Vec::new();
    for e in sorted {
        match out.last() {
            Some(last) if last.key == e.key => {
                if e.seq > last.seq {
                    *out.last_mut().unwrap() = e;
                }
            }
            _ => out.push(e),
        }
    }
    out
}
