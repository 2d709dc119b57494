//! Range queries across both trees.
//!
//! A [`DualIterator`] runs one cursor over the host LSM and one device
//! iterator over the device LSM, and repeatedly emits the smaller of the two
//! head keys. When both heads carry the same key the metadata table decides
//! which side holds the latest version. Host-side reads are charged as block
//! pages; device-side steps go through `kv_seek`/`kv_next` one record at a time.

use bytes::Bytes;

use crate::accel::Store;
use crate::device::{DeviceError, IterId, Response};
use crate::entry::Entry;
use crate::merge::MergeCursor;
use crate::sim::{Micros, TransferId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("iterator invalidated by a concurrent write or rollback")]
    Invalidated,
    #[error("iterator used before seek")]
    NotPositioned,
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Main,
    Dev,
}

#[derive(Debug)]
pub struct DualIterator {
    mutations: u64,
    main: Option<MergeCursor>,
    main_head: Option<Entry>,
    main_pages: u64,
    dev: Option<IterId>,
    dev_head: Option<Entry>,
    dev_done: bool,
    active: Option<Side>,
    switches: usize,
    emitted: usize,
    transfers: Vec<(TransferId, Micros)>,
    device_done: Micros,
}

impl DualIterator {
    pub fn new(store: &Store) -> Self {
        Self {
            mutations: store.mutations(),
            main: None,
            main_head: None,
            main_pages: 0,
            dev: None,
            dev_head: None,
            dev_done: true,
            active: None,
            switches: 0,
            emitted: 0,
            transfers: Vec::new(),
            device_done: 0,
        }
    }

    pub fn switches(&self) -> usize {
        self.switches
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Side that produced the last emitted pair.
    pub fn active(&self) -> Option<Side> {
        self.active
    }

    /// Link transfers issued so far, and the time the device finished its share.
    pub fn take_transfers(&mut self) -> (Vec<(TransferId, Micros)>, Micros) {
        (std::mem::take(&mut self.transfers), self.device_done)
    }

    fn check(&self, store: &Store) -> Result<(), QueryError> {
        if store.mutations() != self.mutations {
            return Err(QueryError::Invalidated);
        }
        Ok(())
    }

    /// Positions both sides at the first key `>= start` and returns the first pair.
    pub fn seek(&mut self, store: &mut Store, start: &[u8]) -> Result<Option<(Bytes, Bytes)>, QueryError> {
        self.check(store)?;
        let (main, dev, _) = store.query_parts();
        let mut cursor = main.cursor();
        cursor.seek(start);
        self.main = Some(cursor);
        if let Some(old) = self.dev.take() {
            dev.close_iter(old);
        }
        self.dev_done = dev.dev_lsm().is_empty();
        self.dev_head = None;
        if !self.dev_done {
            let c = dev.kv_seek(start)?;
            self.record(c.transfers, c.device_done);
            let Response::Iter { iter, entry } = c.response else {
                unreachable!("kv_seek answers with an iterator")
            };
            self.dev = Some(iter);
            self.dev_done = entry.is_none();
            self.dev_head = entry;
        }
        self.advance_main(store)?;
        self.next_inner(store)
    }

    pub fn next(&mut self, store: &mut Store) -> Result<Option<(Bytes, Bytes)>, QueryError> {
        if self.main.is_none() {
            return Err(QueryError::NotPositioned);
        }
        self.check(store)?;
        self.next_inner(store)
    }

    /// Releases the device iterator.
    pub fn close(mut self, store: &mut Store) {
        if let Some(id) = self.dev.take() {
            store.query_parts().1.close_iter(id);
        }
    }

    fn record(&mut self, transfers: Vec<(TransferId, Micros)>, done: Micros) {
        self.transfers.extend(transfers);
        self.device_done = self.device_done.max(done);
    }

    fn advance_main(&mut self, store: &mut Store) -> Result<(), QueryError> {
        let (_, dev, _) = store.query_parts();
        let cursor = self.main.as_mut().expect("positioned");
        self.main_head = cursor.next_entry(dev.media());
        let page = dev.space().page_size;
        let pages = cursor.bytes_read().div_ceil(page);
        if pages > self.main_pages {
            let t = dev.charge_block_read(0, (pages - self.main_pages) * page)?;
            self.main_pages = pages;
            self.transfers.push(t);
        }
        Ok(())
    }

    fn advance_dev(&mut self, store: &mut Store) -> Result<(), QueryError> {
        let Some(id) = self.dev else {
            self.dev_head = None;
            return Ok(());
        };
        let (_, dev, _) = store.query_parts();
        let c = dev.kv_next(id).map_err(|e| match e {
            DeviceError::InvalidIterator => QueryError::Invalidated,
            e => e.into(),
        })?;
        self.record(c.transfers, c.device_done);
        let Response::Iter { entry, .. } = c.response else {
            unreachable!("kv_next answers with an iterator")
        };
        self.dev_done = entry.is_none();
        self.dev_head = entry;
        Ok(())
    }

    fn next_inner(&mut self, store: &mut Store) -> Result<Option<(Bytes, Bytes)>, QueryError> {
        loop {
            let (side, entry) = match (&self.main_head, &self.dev_head) {
                (None, None) => return Ok(None),
                (Some(_), None) => (Side::Main, self.take_main(store)?),
                (None, Some(_)) => (Side::Dev, self.take_dev(store)?),
                (Some(m), Some(d)) if m.key < d.key => (Side::Main, self.take_main(store)?),
                (Some(m), Some(d)) if d.key < m.key => (Side::Dev, self.take_dev(store)?),
                (Some(_), Some(d)) => {
                    let dev_wins = store.metadata().peek(&d.key) == Some(d.seq);
                    let (m, d) = (self.take_main(store)?, self.take_dev(store)?);
                    if dev_wins {
                        (Side::Dev, d)
                    } else {
                        (Side::Main, m)
                    }
                }
            };
            // A device record the metadata does not point at is stale.
            if side == Side::Dev && store.metadata().peek(&entry.key) != Some(entry.seq) {
                continue;
            }
            let Some(value) = entry.visible().cloned() else {
                continue;
            };
            if self.active.is_some_and(|a| a != side) {
                self.switches += 1;
            }
            self.active = Some(side);
            self.emitted += 1;
            return Ok(Some((entry.key, value)));
        }
    }

    fn take_main(&mut self, store: &mut Store) -> Result<Entry, QueryError> {
        let e = self.main_head.take().expect("main head present");
        self.advance_main(store)?;
        Ok(e)
    }

    fn take_dev(&mut self, store: &mut Store) -> Result<Entry, QueryError> {
        let e = self.dev_head.take().expect("device head present");
        self.advance_dev(store)?;
        Ok(e)
    }
}

/// Result of a seek followed by up to `n` nexts.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeResult {
    pub items: Vec<(Bytes, Bytes)>,
    pub switches: usize,
    pub transfers: Vec<(TransferId, Micros)>,
    pub device_done: Micros,
}

pub fn range(store: &mut Store, start: &[u8], n: usize) -> Result<RangeResult, QueryError> {
    let mut it = DualIterator::new(store);
    let mut items = Vec::new();
    let mut next = it.seek(store, start)?;
    while let Some(kv) = next {
        items.push(kv);
        if items.len() > n {
            break;
        }
        next = it.next(store)?;
    }
    let switches = it.switches();
    let (transfers, device_done) = it.take_transfers();
    it.close(store);
    Ok(RangeResult {
        items,
        switches,
        transfers,
        device_done,
    })
}
