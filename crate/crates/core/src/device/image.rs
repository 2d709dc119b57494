//! Device image layout (all integers little-endian):
//!
//! ```text
//! magic        8   "HKVIMG01"
//! page_size    u64
//! total_pages  u64
//! dp           u64
//! mem_count    u32, then mem_count wire records (device memtable)
//! sst_count    u32, then per SST, newest first:
//!   id u64, entries u32, data_len u64, page_count u32, page_count x u64
//! page_count   u64, then per written page: index u64, page_size bytes
//! ```
//!
//! The key-value allocator is rebuilt from the SST page lists.

use super::address::{AddressSpace, PageAllocator, PageStore};
use super::{runs_from_media, wire, DevLsm, DevLsmConfig, DeviceCosts, DeviceError, HybridDevice};
use crate::entry::Entry;
use crate::sim::Interconnect;

pub const MAGIC: &[u8; 8] = b"HKVIMG01";

pub(super) fn dump(dev: &HybridDevice) -> Vec<u8> {
    let (lsm, media) = dev.dev_parts();
    let space = dev.space();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&space.page_size.to_le_bytes());
    out.extend_from_slice(&space.total_pages.to_le_bytes());
    out.extend_from_slice(&space.disaggregation_point.to_le_bytes());
    let mem: Vec<&Entry> = lsm.memtable_entries().collect();
    out.extend_from_slice(&(mem.len() as u32).to_le_bytes());
    for e in mem {
        wire::encode_record(&mut out, e).expect("memtable keys fit the wire format");
    }
    out.extend_from_slice(&(lsm.ssts().len() as u32).to_le_bytes());
    for s in lsm.ssts() {
        out.extend_from_slice(&s.id.to_le_bytes());
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(&s.data_len.to_le_bytes());
        out.extend_from_slice(&(s.pages.len() as u32).to_le_bytes());
        for p in &s.pages {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    let pages: Vec<(u64, &[u8])> = media.written_pages().collect();
    out.extend_from_slice(&(pages.len() as u64).to_le_bytes());
    for (i, data) in pages {
        out.extend_from_slice(&i.to_le_bytes());
        out.extend_from_slice(data);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DeviceError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| DeviceError::Image(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DeviceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DeviceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(super) fn load(
    bytes: &[u8],
    dev_cfg: DevLsmConfig,
    costs: DeviceCosts,
    link: Interconnect,
) -> Result<HybridDevice, DeviceError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(DeviceError::Image("bad magic".into()));
    }
    let page_size = r.u64()?;
    let total = r.u64()?;
    let dp = r.u64()?;
    let space = AddressSpace::new(total, page_size, dp)?;

    let mem_count = r.u32()?;
    let mut mem = Vec::with_capacity(mem_count as usize);
    for _ in 0..mem_count {
        let (rec, len) = wire::decode_record(r.buf, r.pos)?;
        r.pos += len;
        mem.push(Entry {
            key: rec.key,
            value: rec.value,
            seq: rec.seq,
            tombstone: rec.tombstone,
        });
    }

    let sst_count = r.u32()?;
    let mut specs = Vec::with_capacity(sst_count as usize);
    for _ in 0..sst_count {
        let id = r.u64()?;
        let count = r.u32()?;
        let data_len = r.u64()?;
        let n = r.u32()?;
        let pages = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
        specs.push((id, count, data_len, pages));
    }

    let mut media = PageStore::new(&space);
    let written = r.u64()?;
    for _ in 0..written {
        let idx = r.u64()?;
        if idx >= total {
            return Err(DeviceError::Image(format!("page {idx} beyond device end")));
        }
        let data = r.take(page_size as usize)?;
        media.write(idx, data);
    }
    if r.pos != bytes.len() {
        return Err(DeviceError::Image("trailing bytes".into()));
    }

    let mut alloc = PageAllocator::new(dp, total);
    for (_, _, _, pages) in &specs {
        if !alloc.mark_used(pages) {
            return Err(DeviceError::Image("device SST page outside region or owned twice".into()));
        }
    }
    let runs = runs_from_media(&media, specs)?;
    let mut lsm = DevLsm::new(dev_cfg, page_size, space.kv_capacity());
    lsm.restore(mem, runs);

    let mut dev = HybridDevice::with_parts(space, lsm.config().clone(), costs, link);
    *dev.media_mut() = media;
    dev.install_restored(lsm, alloc);
    Ok(dev)
}

impl HybridDevice {
    fn install_restored(&mut self, lsm: DevLsm, alloc: PageAllocator) {
        self.dev = lsm;
        self.kv_alloc = alloc;
    }
}
