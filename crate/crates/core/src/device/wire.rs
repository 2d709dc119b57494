//! Bulk-scan record format and 512 KiB chunking.
//!
//! Each record is laid out little-endian as:
//!
//! ```text
//! key_len: u16 | key | seq: u64 | flags: u8 | value_len: u32 | value
//! ```
//!
//! `flags` bit 0 marks a tombstone, bit 1 marks a fragment that continues in
//! the next record. Records are packed into chunks of at most
//! [`CHUNK_LIMIT`] bytes and never straddle a chunk boundary. A record larger
//! than a chunk is split into fragments that each fill one chunk; the final
//! fragment (continuation bit clear) opens a new chunk that later records may
//! share.

use bytes::Bytes;

use crate::entry::Entry;

pub const CHUNK_LIMIT: usize = 512 * 1024;
/// Bytes of a record that are not key or value.
pub const RECORD_HEADER: usize = 2 + 8 + 1 + 4;

const FLAG_TOMBSTONE: u8 = 1;
const FLAG_CONTINUATION: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("record truncated at byte {0}")]
    Truncated(usize),
    #[error("key of {0} bytes exceeds the u16 length field")]
    KeyTooLong(usize),
    #[error("unknown flag bits {0:#04x}")]
    BadFlags(u8),
    #[error("continuation fragment for a different key or version")]
    BrokenContinuation,
    #[error("stream ended inside a fragmented record")]
    DanglingFragment,
}

pub fn record_len(e: &Entry) -> usize {
    RECORD_HEADER + e.key.len() + e.value.len()
}

fn put_record(out: &mut Vec<u8>, key: &[u8], seq: u64, flags: u8, value: &[u8]) {
    out.extend_from_slice(&(key.len() as u16).to_le_bytes());
    out.extend_from_slice(key);
    out.extend_from_slice(&seq.to_le_bytes());
    out.push(flags);
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value);
}

/// Appends one whole record.
pub fn encode_record(out: &mut Vec<u8>, e: &Entry) -> Result<(), WireError> {
    if e.key.len() > u16::MAX as usize {
        return Err(WireError::KeyTooLong(e.key.len()));
    }
    let flags = if e.tombstone { FLAG_TOMBSTONE } else { 0 };
    put_record(out, &e.key, e.seq, flags, &e.value);
    Ok(())
}

/// One decoded record, possibly a fragment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub key: Bytes,
    pub seq: u64,
    pub tombstone: bool,
    pub continues: bool,
    pub value: Bytes,
}

/// Decodes the record starting at `buf[pos..]`, returning it and its length.
pub fn decode_record(buf: &[u8], pos: usize) -> Result<(RawRecord, usize), WireError> {
    let need = |n: usize| {
        if pos + n > buf.len() {
            Err(WireError::Truncated(pos))
        } else {
            Ok(())
        }
    };
    need(2)?;
    let klen = u16::from_le_bytes([buf[pos], buf[pos + 1]]) as usize;
    need(RECORD_HEADER + klen)?;
    let mut p = pos + 2;
    let key = Bytes::copy_from_slice(&buf[p..p + klen]);
    p += klen;
    let seq = u64::from_le_bytes(buf[p..p + 8].try_into().unwrap());
    p += 8;
    let flags = buf[p];
    p += 1;
    if flags & !(FLAG_TOMBSTONE | FLAG_CONTINUATION) != 0 {
        return Err(WireError::BadFlags(flags));
    }
    let vlen = u32::from_le_bytes(buf[p..p + 4].try_into().unwrap()) as usize;
    p += 4;
    need(RECORD_HEADER + klen + vlen)?;
    let value = Bytes::copy_from_slice(&buf[p..p + vlen]);
    p += vlen;
    Ok((
        RawRecord {
            key,
            seq,
            tombstone: flags & FLAG_TOMBSTONE != 0,
            continues: flags & FLAG_CONTINUATION != 0,
            value,
        },
        p - pos,
    ))
}

/// Packs records into chunks.
#[derive(Debug)]
pub struct ChunkWriter {
    limit: usize,
    done: Vec<Vec<u8>>,
    cur: Vec<u8>,
    records: usize,
}

impl Default for ChunkWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl ChunkWriter {
    pub fn new() -> Self {
        Self::with_limit(CHUNK_LIMIT)
    }

    /// Smaller limits exist for tests; the limit must leave room for a header.
    pub fn with_limit(limit: usize) -> Self {
        assert!(limit > RECORD_HEADER + 1);
        Self {
            limit,
            done: Vec::new(),
            cur: Vec::new(),
            records: 0,
        }
    }

    fn close_current(&mut self) {
        if !self.cur.is_empty() {
            self.done.push(std::mem::take(&mut self.cur));
        }
    }

    pub fn push(&mut self, e: &Entry) -> Result<(), WireError> {
        if e.key.len() > u16::MAX as usize || RECORD_HEADER + e.key.len() >= self.limit {
            return Err(WireError::KeyTooLong(e.key.len()));
        }
        self.records += 1;
        let len = record_len(e);
        if len <= self.limit {
            if self.cur.len() + len > self.limit {
                self.close_current();
            }
            return encode_record(&mut self.cur, e);
        }
        self.close_current();
        let base = if e.tombstone { FLAG_TOMBSTONE } else { 0 };
        let room = self.limit - RECORD_HEADER - e.key.len();
        let mut rest: &[u8] = &e.value;
        while rest.len() > room {
            let mut chunk = Vec::with_capacity(self.limit);
            put_record(&mut chunk, &e.key, e.seq, base | FLAG_CONTINUATION, &rest[..room]);
            self.done.push(chunk);
            rest = &rest[room..];
        }
        put_record(&mut self.cur, &e.key, e.seq, base, rest);
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.records
    }

    pub fn finish(mut self) -> Vec<Vec<u8>> {
        self.close_current();
        self.done
    }
}

/// Serializes `entries` into chunks of at most [`CHUNK_LIMIT`] bytes.
pub fn pack(entries: &[Entry]) -> Result<Vec<Vec<u8>>, WireError> {
    let mut w = ChunkWriter::new();
    for e in entries {
        w.push(e)?;
    }
    Ok(w.finish())
}

/// Closed-form chunk count for `n` records of `record_len` bytes each, when
/// every record fits in a chunk.
pub fn predicted_chunks(n: usize, record_len: usize) -> usize {
    assert!(record_len <= CHUNK_LIMIT);
    let per_chunk = CHUNK_LIMIT / record_len;
    n.div_ceil(per_chunk)
}

/// Incremental decoder that reassembles fragments across chunk boundaries.
#[derive(Debug, Clone, Default)]
pub struct ChunkDecoder {
    pending: Option<(Bytes, u64, bool, Vec<u8>)>,
}

impl ChunkDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Result<Vec<Entry>, WireError> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < chunk.len() {
            let (rec, len) = decode_record(chunk, pos)?;
            pos += len;
            let (key, seq, tomb, mut value) = match self.pending.take() {
                Some((k, s, t, mut buf)) => {
                    if k != rec.key || s != rec.seq || t != rec.tombstone {
                        return Err(WireError::BrokenContinuation);
                    }
                    buf.extend_from_slice(&rec.value);
                    (k, s, t, buf)
                }
                None => (rec.key, rec.seq, rec.tombstone, Vec::new()),
            };
            if rec.continues {
                if value.is_empty() {
                    value.extend_from_slice(&rec.value);
                }
                self.pending = Some((key, seq, tomb, value));
                continue;
            }
            let value = if value.is_empty() { rec.value } else { Bytes::from(value) };
            out.push(Entry {
                key,
                value,
                seq,
                tombstone: tomb,
            });
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.pending {
            Some(_) => Err(WireError::DanglingFragment),
            None => Ok(()),
        }
    }
}

/// Decodes a whole chunk stream.
pub fn unpack(chunks: &[Vec<u8>]) -> Result<Vec<Entry>, WireError> {
    let mut d = ChunkDecoder::new();
    let mut out = Vec::new();
    for c in chunks {
        out.extend(d.feed(c)?);
    }
    d.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn record_layout_is_bit_exact() {
        let mut buf = Vec::new();
        encode_record(&mut buf, &Entry::put(&b"ab"[..], &b"xyz"[..], 0x0102)).unwrap();
        assert_eq!(
            buf,
            vec![2, 0, b'a', b'b', 0x02, 0x01, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, b'x', b'y', b'z']
        );
        let mut t = Vec::new();
        encode_record(&mut t, &Entry::delete(&b"k"[..], 9)).unwrap();
        assert_eq!(t, vec![1, 0, b'k', 9, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn one_mebibyte_of_four_kib_values() {
        // 256 records of 4 B key + 4096 B value = 4115 B each; 127 fit per chunk.
        let entries: Vec<Entry> = (0..256u32)
            .map(|i| Entry::put(i.to_be_bytes().to_vec(), vec![7u8; 4096], i as u64))
            .collect();
        let chunks = pack(&entries).unwrap();
        assert_eq!(record_len(&entries[0]), 4115);
        assert_eq!(chunks.len(), predicted_chunks(256, 4115));
        assert_eq!(chunks.len(), 3);
        assert_eq!(chunks[0].len(), 127 * 4115);
        assert_eq!(chunks[1].len(), 127 * 4115);
        assert_eq!(chunks[2].len(), 2 * 4115);
        assert_eq!(unpack(&chunks).unwrap(), entries);
    }

    #[test]
    fn exact_fit_records_fill_chunks_completely() {
        // records of exactly 4096 bytes: 128 per chunk, 256 -> 2 chunks.
        let vlen = 4096 - RECORD_HEADER - 4;
        let entries: Vec<Entry> = (0..256u32)
            .map(|i| Entry::put(i.to_be_bytes().to_vec(), vec![1u8; vlen], 1))
            .collect();
        let chunks = pack(&entries).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.len() == CHUNK_LIMIT));
    }

    #[test]
    fn oversized_record_fragments() {
        let big = Entry::put(&b"big"[..], vec![3u8; CHUNK_LIMIT * 2 + 10], 5);
        let small = Entry::put(&b"z"[..], &b"v"[..], 6);
        let chunks = pack(&[small.clone(), big.clone(), small.clone()]).unwrap();
        assert!(chunks.iter().all(|c| c.len() <= CHUNK_LIMIT));
        assert_eq!(chunks.len(), 4);
        assert_eq!(unpack(&chunks).unwrap(), vec![small.clone(), big, small]);
    }

    #[test]
    fn empty_stream() {
        assert!(pack(&[]).unwrap().is_empty());
        assert!(unpack(&[]).unwrap().is_empty());
    }

    #[test]
    fn truncated_and_dangling_errors() {
        let mut buf = Vec::new();
        encode_record(&mut buf, &Entry::put(&b"k"[..], &b"vv"[..], 1)).unwrap();
        assert!(matches!(unpack(&[buf[..buf.len() - 1].to_vec()]), Err(WireError::Truncated(0))));
        let mut w = ChunkWriter::with_limit(64);
        w.push(&Entry::put(&b"k"[..], vec![0u8; 200], 1)).unwrap();
        let mut chunks = w.finish();
        chunks.pop();
        assert_eq!(unpack(&chunks), Err(WireError::DanglingFragment));
    }

    proptest! {
        #[test]
        fn pack_unpack_preserves_records(
            recs in prop::collection::vec((prop::collection::vec(any::<u8>(), 1..20),
                                           prop::collection::vec(any::<u8>(), 0..300),
                                           any::<u64>(), any::<bool>()), 0..60),
            limit in 40usize..600,
        ) {
            let entries: Vec<Entry> = recs.into_iter().map(|(k, v, s, t)| Entry {
                key: k.into(), value: if t { Bytes::new() } else { v.into() }, seq: s, tombstone: t,
            }).collect();
            let mut w = ChunkWriter::with_limit(limit);
            for e in &entries { w.push(e).unwrap(); }
            let chunks = w.finish();
            prop_assert!(chunks.iter().all(|c| c.len() <= limit && !c.is_empty()));
            let mut d = ChunkDecoder::new();
            let mut got = Vec::new();
            for c in &chunks { got.extend(d.feed(c).unwrap()); }
            d.finish().unwrap();
            prop_assert_eq!(got, entries);
        }
    }
}
