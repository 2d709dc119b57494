//! SST file layout in the block region (integers little-endian):
//!
//! ```text
//! magic      u32  0x54535348 ("HSST")
//! count      u32  number of records
//! data_len   u64  bytes of the record area
//! records         count wire records, strictly ascending by key
//! min_len    u16, min_key
//! max_len    u16, max_key
//! ```
//!
//! Records use the same encoding as the key-value wire format.

use std::sync::Arc;

use bytes::Bytes;

use crate::device::wire::{self, WireError};
use crate::device::{PageStore, SortedRun};
use crate::entry::Entry;

pub const SST_MAGIC: u32 = 0x5453_5348;
pub const SST_HEADER: usize = 16;

/// Encodes sorted, key-unique entries as an SST file image.
pub fn encode_sst(entries: &[Entry]) -> Result<Vec<u8>, WireError> {
    debug_assert!(entries.windows(2).all(|w| w[0].key < w[1].key));
    let mut out = vec![0u8; SST_HEADER];
    for e in entries {
        wire::encode_record(&mut out, e)?;
    }
    let data_len = (out.len() - SST_HEADER) as u64;
    out[0..4].copy_from_slice(&SST_MAGIC.to_le_bytes());
    out[4..8].copy_from_slice(&(entries.len() as u32).to_le_bytes());
    out[8..16].copy_from_slice(&data_len.to_le_bytes());
    let empty = Bytes::new();
    let min = entries.first().map_or(&empty, |e| &e.key);
    let max = entries.last().map_or(&empty, |e| &e.key);
    for k in [min, max] {
        out.extend_from_slice(&(k.len() as u16).to_le_bytes());
        out.extend_from_slice(k);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SstHeader {
    pub count: u32,
    pub data_len: u64,
    pub min_key: Bytes,
    pub max_key: Bytes,
}

fn short(at: usize) -> WireError {
    WireError::Truncated(at)
}

pub fn decode_header(file: &[u8]) -> Result<SstHeader, WireError> {
    if file.len() < SST_HEADER || u32::from_le_bytes(file[0..4].try_into().unwrap()) != SST_MAGIC {
        return Err(short(0));
    }
    let count = u32::from_le_bytes(file[4..8].try_into().unwrap());
    let data_len = u64::from_le_bytes(file[8..16].try_into().unwrap());
    let mut pos = SST_HEADER + data_len as usize;
    let mut key = || -> Result<Bytes, WireError> {
        let len_bytes = file.get(pos..pos + 2).ok_or(short(pos))?;
        let len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let k = file.get(pos + 2..pos + 2 + len).ok_or(short(pos))?;
        pos += 2 + len;
        Ok(Bytes::copy_from_slice(k))
    };
    let min_key = key()?;
    let max_key = key()?;
    Ok(SstHeader {
        count,
        data_len,
        min_key,
        max_key,
    })
}

/// Decodes every record of an SST file image.
pub fn decode_sst(file: &[u8]) -> Result<Vec<Entry>, WireError> {
    let h = decode_header(file)?;
    let mut pos = SST_HEADER;
    let mut out = Vec::with_capacity(h.count as usize);
    for _ in 0..h.count {
        let (rec, len) = wire::decode_record(file, pos)?;
        pos += len;
        out.push(Entry {
            key: rec.key,
            value: rec.value,
            seq: rec.seq,
            tombstone: rec.tombstone,
        });
    }
    Ok(out)
}

/// An installed SST: its block extent plus the in-memory key index.
#[derive(Debug, Clone)]
pub struct SsTable {
    pub id: u64,
    pub level: usize,
    pub extent_start: u64,
    pub extent_pages: u64,
    /// File size in bytes.
    pub size: u64,
    pub run: Arc<SortedRun>,
}

impl SsTable {
    pub fn new(id: u64, level: usize, extent_start: u64, file: &[u8], page_size: u64) -> Result<Self, WireError> {
        let h = decode_header(file)?;
        let pages = file.len().div_ceil(page_size as usize) as u64;
        let page_list = (extent_start..extent_start + pages).collect();
        let run = SortedRun::index(id, page_list, file, SST_HEADER, h.count as usize)?;
        Ok(Self {
            id,
            level,
            extent_start,
            extent_pages: pages,
            size: file.len() as u64,
            run: Arc::new(run),
        })
    }

    pub fn min_key(&self) -> &Bytes {
        self.run.min_key()
    }

    pub fn max_key(&self) -> &Bytes {
        self.run.max_key()
    }

    pub fn entries(&self) -> usize {
        self.run.len()
    }

    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.min_key().as_ref() <= hi && lo <= self.max_key().as_ref()
    }

    /// Pages holding record `i`, as (first lba, count).
    pub fn record_pages(&self, i: usize, page_size: u64) -> (u64, u64) {
        let off = self.run.record_offset(i);
        let end = off + self.run.record_len(i);
        let first = off / page_size;
        let last = (end - 1) / page_size;
        (self.extent_start + first, last - first + 1)
    }

    /// Reads the whole file back from the media.
    pub fn read_file(&self, media: &PageStore) -> Vec<u8> {
        media.read_span(&self.run.pages, 0, self.size as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let file = encode_sst(&[Entry::put("a", "x", 1), Entry::delete("b", 2)]).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(b"HSST");
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&33u64.to_le_bytes());
        want.extend_from_slice(&[1, 0, b'a', 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, b'x']);
        want.extend_from_slice(&[1, 0, b'b', 2, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0]);
        want.extend_from_slice(&[1, 0, b'a', 1, 0, b'b']);
        assert_eq!(file, want);
        let h = decode_header(&file).unwrap();
        assert_eq!((h.count, h.min_key.as_ref(), h.max_key.as_ref()), (2, &b"a"[..], &b"b"[..]));
        assert_eq!(decode_sst(&file).unwrap()[1], Entry::delete("b", 2));
    }

    #[test]
    fn record_pages_cover_the_record() {
        let entries: Vec<Entry> = (0..10).map(|i| Entry::put(format!("k{i}"), vec![0u8; 1000], i)).collect();
        let file = encode_sst(&entries).unwrap();
        let t = SsTable::new(1, 0, 100, &file, 4096).unwrap();
        assert_eq!(t.record_pages(0, 4096), (100, 1));
        // Records are 1017 bytes: record 3 ends at 4084, record 4 crosses 4096.
        assert_eq!(t.record_pages(3, 4096), (100, 1));
        assert_eq!(t.record_pages(4, 4096), (100, 2));
        assert_eq!(t.extent_pages, file.len().div_ceil(4096) as u64);
    }
}
