//! K-way merge over sorted sources.
//!
//! Among sources holding the same key the highest sequence number wins
//! (earlier sources win ties) and every other source is advanced past the
//! key. Tombstones are returned, not filtered.

use std::sync::Arc;

use bytes::Bytes;

use crate::device::{PageStore, SortedRun};
use crate::entry::Entry;

#[derive(Debug, Clone)]
pub enum Source {
    /// In-memory snapshot, sorted by key with one entry per key.
    Mem { entries: Arc<Vec<Entry>>, pos: usize },
    /// One run on the media.
    Run { run: Arc<SortedRun>, pos: usize },
    /// Key-disjoint runs sorted by key, read as one sequence.
    Level { runs: Vec<Arc<SortedRun>>, run: usize, pos: usize },
}

impl Source {
    pub fn mem(entries: Arc<Vec<Entry>>) -> Self {
        Source::Mem { entries, pos: 0 }
    }

    pub fn run(run: Arc<SortedRun>) -> Self {
        Source::Run { run, pos: 0 }
    }

    pub fn level(runs: Vec<Arc<SortedRun>>) -> Self {
        Source::Level { runs, run: 0, pos: 0 }
    }

    fn peek(&self) -> Option<&Bytes> {
        match self {
            Source::Mem { entries, pos } => entries.get(*pos).map(|e| &e.key),
            Source::Run { run, pos } => (*pos < run.len()).then(|| run.key(*pos)),
            Source::Level { runs, run, pos } => runs.get(*run).map(|r| r.key(*pos)),
        }
    }

    fn peek_seq(&self) -> u64 {
        match self {
            Source::Mem { entries, pos } => entries[*pos].seq,
            Source::Run { run, pos } => run.seq(*pos),
            Source::Level { runs, run, pos } => runs[*run].seq(*pos),
        }
    }

    fn advance(&mut self) {
        match self {
            Source::Mem { pos, .. } | Source::Run { pos, .. } => *pos += 1,
            Source::Level { runs, run, pos } => {
                *pos += 1;
                if *pos >= runs[*run].len() {
                    *run += 1;
                    *pos = 0;
                }
            }
        }
    }

    /// Returns the current entry and the media bytes read to get it.
    fn read(&self, media: &PageStore) -> (Entry, u64) {
        match self {
            Source::Mem { entries, pos } => (entries[*pos].clone(), 0),
            Source::Run { run, pos } => (run.read(*pos, media), run.record_len(*pos)),
            Source::Level { runs, run, pos } => {
                let r = &runs[*run];
                (r.read(*pos, media), r.record_len(*pos))
            }
        }
    }

    fn seek(&mut self, key: &[u8]) {
        match self {
            Source::Mem { entries, pos } => *pos = entries.partition_point(|e| e.key.as_ref() < key),
            Source::Run { run: r, pos } => *pos = r.lower_bound(key),
            Source::Level { runs, run, pos } => {
                let idx = runs.partition_point(|r| r.max_key().as_ref() < key);
                *run = idx;
                *pos = if idx < runs.len() { runs[idx].lower_bound(key) } else { 0 };
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MergeCursor {
    sources: Vec<Source>,
    bytes_read: u64,
}

impl MergeCursor {
    pub fn new(sources: Vec<Source>) -> Self {
        let sources = sources
            .into_iter()
            .filter(|s| match s {
                Source::Level { runs, .. } => !runs.is_empty(),
                _ => true,
            })
            .collect();
        Self {
            sources,
            bytes_read: 0,
        }
    }

    pub fn seek(&mut self, key: &[u8]) {
        for s in &mut self.sources {
            s.seek(key);
        }
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    /// Media bytes read so far.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    pub fn peek_key(&self) -> Option<Bytes> {
        self.sources.iter().filter_map(|s| s.peek()).min().cloned()
    }

    /// Next key in order with its newest version.
    pub fn next_entry(&mut self, media: &PageStore) -> Option<Entry> {
        let mut best: Option<(usize, &Bytes, u64)> = None;
        for (i, s) in self.sources.iter().enumerate() {
            if let Some(k) = s.peek() {
                let seq = s.peek_seq();
                let better = match best {
                    None => true,
                    Some((_, b, bs)) => k < b || (k == b && seq > bs),
                };
                if better {
                    best = Some((i, k, seq));
                }
            }
        }
        let (winner, key, _) = best?;
        let key = key.clone();
        let (entry, read) = self.sources[winner].read(media);
        self.bytes_read += read;
        for s in &mut self.sources {
            if s.peek() == Some(&key) {
                s.advance();
            }
        }
        Some(entry)
    }
}
