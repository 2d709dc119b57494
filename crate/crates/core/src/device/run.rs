//! An immutable sorted run of records stored on device pages, with an
//! in-memory index of keys and record offsets.

use bytes::Bytes;

use super::address::PageStore;
use super::wire::{self, WireError};
use crate::entry::Entry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedRun {
    pub id: u64,
    /// Pages holding the run, in byte order.
    pub pages: Vec<u64>,
    /// Bytes of meaningful data (the last page may be padded).
    pub data_len: u64,
    keys: Vec<Bytes>,
    seqs: Vec<u64>,
    offsets: Vec<u32>,
    lens: Vec<u32>,
}

impl SortedRun {
    /// Builds the index for records laid out starting at `first_offset` in `image`.
    pub fn index(id: u64, pages: Vec<u64>, image: &[u8], first_offset: usize, count: usize) -> Result<Self, WireError> {
        let mut run = Self {
            id,
            pages,
            data_len: image.len() as u64,
            keys: Vec::with_capacity(count),
            seqs: Vec::with_capacity(count),
            offsets: Vec::with_capacity(count),
            lens: Vec::with_capacity(count),
        };
        let mut pos = first_offset;
        for _ in 0..count {
            let (rec, len) = wire::decode_record(image, pos)?;
            run.keys.push(rec.key);
            run.seqs.push(rec.seq);
            run.offsets.push(pos as u32);
            run.lens.push(len as u32);
            pos += len;
        }
        Ok(run)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn min_key(&self) -> &Bytes {
        &self.keys[0]
    }

    pub fn max_key(&self) -> &Bytes {
        self.keys.last().unwrap()
    }

    pub fn covers(&self, key: &[u8]) -> bool {
        !self.is_empty() && self.min_key().as_ref() <= key && key <= self.max_key().as_ref()
    }

    pub fn key(&self, i: usize) -> &Bytes {
        &self.keys[i]
    }

    pub fn seq(&self, i: usize) -> u64 {
        self.seqs[i]
    }

    pub fn record_offset(&self, i: usize) -> u64 {
        self.offsets[i] as u64
    }

    pub fn record_len(&self, i: usize) -> u64 {
        self.lens[i] as u64
    }

    pub fn find(&self, key: &[u8]) -> Option<usize> {
        self.keys.binary_search_by(|k| k.as_ref().cmp(key)).ok()
    }

    pub fn lower_bound(&self, key: &[u8]) -> usize {
        self.keys.partition_point(|k| k.as_ref() < key)
    }

    /// Reads and decodes record `i` from the media.
    pub fn read(&self, i: usize, media: &PageStore) -> Entry {
        let bytes = media.read_span(&self.pages, self.offsets[i] as usize, self.lens[i] as usize);
        let (rec, _) = wire::decode_record(&bytes, 0).expect("index points at a valid record");
        Entry {
            key: rec.key,
            value: rec.value,
            seq: rec.seq,
            tombstone: rec.tombstone,
        }
    }

    pub fn page_count(&self) -> u64 {
        self.pages.len() as u64
    }
}
