use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::device::DeviceConfig;
use crate::sim::{Direction, Interface};

fn device() -> HybridDevice {
    HybridDevice::new(&DeviceConfig {
        capacity: 64 << 20,
        ..DeviceConfig::default()
    })
    .unwrap()
}

fn small() -> LsmConfig {
    LsmConfig {
        memtable_bytes: 4 * 1024,
        l1_target: 16 * 1024,
        sst_target: 4 * 1024,
        pending_soft: 64 * 1024,
        pending_hard: 256 * 1024,
        ..LsmConfig::default()
    }
}

fn key(i: u32) -> Bytes {
    Bytes::from(format!("key{i:05}"))
}

fn ack(o: PutOutcome) {
    assert!(matches!(o, PutOutcome::Ack { .. }), "{o:?}");
}

#[test]
fn memtable_charge() {
    let d = device();
    let mut m = MainLsm::new(LsmConfig::default(), &d);
    ack(m.put_local(Entry::put("abcd", vec![0u8; 100], 1)));
    assert_eq!(m.memtable().byte_size(), 4 + 100 + crate::entry::ENTRY_OVERHEAD);
}

#[test]
fn third_put_rotates_two_entry_memtable() {
    let d = device();
    let e = |i: u32| Entry::put(key(i), "v", i as u64);
    let cfg = LsmConfig {
        memtable_bytes: 2 * e(1).charge(),
        ..LsmConfig::default()
    };
    let mut m = MainLsm::new(cfg, &d);
    ack(m.put_local(e(1)));
    ack(m.put_local(e(2)));
    assert_eq!(m.imt_count(), 0);
    ack(m.put_local(e(3)));
    assert_eq!(m.imt_count(), 1);
    assert_eq!(m.memtable().len(), 1);
    assert!(m.start_flush().is_some());
}

fn fill_l0(m: &mut MainLsm, d: &mut HybridDevice, files: usize) {
    for f in 0..files {
        for i in 0..4 {
            ack(m.put_local(Entry::put(key(i), vec![f as u8; 10], (f * 4 + i as usize + 1) as u64)));
        }
        m.rotate();
        m.flush_imts(d).unwrap();
    }
}

#[test]
fn l0_stop_blocks_writes() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    fill_l0(&mut m, &mut d, 7);
    assert_eq!(m.stall_status().verdict, Verdict::Slowdown);
    fill_l0(&mut m, &mut d, 1);
    let s = m.stall_status();
    assert_eq!((s.l0_count, s.verdict), (8, Verdict::Stall));
    assert_eq!(m.put_local(Entry::put("x", "y", 100)), PutOutcome::Blocked(StallReason::L0Stop));
    assert_eq!(m.counters().blocked[&StallReason::L0Stop], 1);
    // Overlapping L0 files are all retained.
    assert_eq!(m.level(0).len(), 8);
    assert!(m.level(0).iter().all(|t| t.min_key() == &key(0)));
}

#[test]
fn flush_backlog_blocks_writes() {
    let d = device();
    let mut m = MainLsm::new(small(), &d);
    let mut seq = 0;
    let reason = loop {
        seq += 1;
        match m.put_local(Entry::put(key(seq), vec![0u8; 500], seq as u64)) {
            PutOutcome::Ack { .. } => {}
            PutOutcome::Blocked(r) => break r,
        }
    };
    assert_eq!(reason, StallReason::FlushBacklog);
    assert_eq!(m.imt_count(), m.config().max_imts);
}

#[test]
fn slowdown_policy_sleeps() {
    let mut d = device();
    let cfg = LsmConfig {
        policy: WritePolicy::Slowdown,
        ..small()
    };
    let mut m = MainLsm::new(cfg, &d);
    fill_l0(&mut m, &mut d, 4);
    assert_eq!(m.stall_status().verdict, Verdict::Slowdown);
    assert_eq!(m.put_local(Entry::put("a", "b", 99)), PutOutcome::Ack { delay_us: 1000 });
    assert_eq!(m.counters().slowdowns, 1);
}

#[test]
fn reads_see_newest_version() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    assert_eq!(m.get_local(b"k", &mut d).unwrap().entry, None);
    ack(m.put_local(Entry::put("k", "v1", 1)));
    ack(m.put_local(Entry::put("k", "v2", 2)));
    assert_eq!(m.get_local(b"k", &mut d).unwrap().entry.unwrap().value, "v2");
}

#[test]
fn key_in_l1_costs_a_block_read() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    fill_l0(&mut m, &mut d, 2);
    m.settle(&mut d).unwrap();
    assert!(m.level(0).is_empty());
    assert_eq!(m.level(1).len(), 1);
    d.drain();
    let before = d.link().ledger().total(Interface::Block, Direction::DeviceToHost);
    let l = m.get_local(&key(2), &mut d).unwrap();
    assert_eq!(l.entry.unwrap().value, vec![1u8; 10]);
    assert_eq!(l.probes, 1);
    d.drain();
    let after = d.link().ledger().total(Interface::Block, Direction::DeviceToHost);
    assert_eq!(after - before, 4096);
}

#[test]
fn flush_writes_sorted_l0_file() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    for i in [5u32, 1, 3, 2, 4] {
        ack(m.put_local(Entry::put(key(i), "v", i as u64)));
    }
    m.rotate();
    m.flush_imts(&mut d).unwrap();
    let t = &m.level(0)[0];
    assert_eq!(t.entries(), 5);
    let file = t.read_file(d.media());
    let keys: Vec<_> = sst::decode_sst(&file).unwrap().into_iter().map(|e| e.key).collect();
    assert_eq!(keys, (1..=5).map(key).collect::<Vec<_>>());
}

#[test]
fn compaction_merges_duplicates_and_audits_ledger() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    fill_l0(&mut m, &mut d, 2);
    d.drain();
    let sizes_in: u64 = m.level(0).iter().map(|t| t.size).sum();
    let before = d.link().ledger().total(Interface::Block, Direction::DeviceToHost)
        + d.link().ledger().total(Interface::Block, Direction::HostToDevice);
    let j = m.start_compaction().unwrap();
    assert_eq!(m.job_kind(j), Some(JobKind::Compaction { level: 0 }));
    m.run_job(j, &mut d).unwrap();
    d.drain();
    let after = d.link().ledger().total(Interface::Block, Direction::DeviceToHost)
        + d.link().ledger().total(Interface::Block, Direction::HostToDevice);
    let l1 = m.level(1);
    assert_eq!(l1.len(), 1);
    let sizes_out: u64 = l1.iter().map(|t| t.size).sum();
    assert_eq!(after - before, sizes_in + sizes_out);
    let entries = sst::decode_sst(&l1[0].read_file(d.media())).unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.iter().all(|e| e.value == vec![1u8; 10] && e.seq > 4));
    m.check_invariants().unwrap();
}

#[test]
fn tombstones_drop_at_bottom() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    ack(m.put_local(Entry::put("a", "1", 1)));
    ack(m.put_local(Entry::delete("b", 2)));
    m.rotate();
    m.flush_imts(&mut d).unwrap();
    ack(m.put_local(Entry::delete("a", 3)));
    m.flush_all(&mut d).unwrap();
    assert_eq!(m.level(1).iter().map(|t| t.entries()).sum::<usize>(), 0);
    assert!(m.visible(d.media()).is_empty());
}

#[test]
fn job_steps_separate_read_cpu_and_write() {
    let mut d = device();
    let mut m = MainLsm::new(small(), &d);
    fill_l0(&mut m, &mut d, 2);
    let j = m.start_compaction().unwrap();
    assert!(matches!(m.step(j, &mut d).unwrap(), JobStep::Transfers(_)));
    assert!(matches!(m.step(j, &mut d).unwrap(), JobStep::Cpu { us, threads: 1 } if us > 0));
    assert!(matches!(m.step(j, &mut d).unwrap(), JobStep::Transfers(_)));
    assert!(m.check_invariants().is_ok());
    assert_eq!(m.step(j, &mut d).unwrap(), JobStep::Done);
    assert_eq!(m.step(j, &mut d), Err(LsmError::UnknownJob));
}

#[derive(Debug, Clone)]
enum Op {
    Put(u16, u16),
    Del(u16),
    Get(u16),
    Background,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u16..400, 1u16..800).prop_map(|(k, v)| Op::Put(k, v)),
        1 => (0u16..400).prop_map(Op::Del),
        2 => (0u16..400).prop_map(Op::Get),
        1 => Just(Op::Background),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_sorted_map_oracle(ops in prop::collection::vec(op(), 1..600), workers in 1usize..4) {
        let mut d = device();
        let cfg = LsmConfig { compaction_workers: workers, ..small() };
        let mut m = MainLsm::new(cfg, &d);
        let mut oracle: BTreeMap<Bytes, Bytes> = BTreeMap::new();
        let mut seq = 0u64;
        // Jobs are interleaved by hand to exercise concurrent compactions.
        let mut running: Vec<JobId> = Vec::new();
        for op in ops {
            match op {
                Op::Put(..) | Op::Del(_) => {
                    let e = match op {
                        Op::Put(k, v) => Entry::put(key(k as u32), vec![v as u8; v as usize], seq + 1),
                        Op::Del(k) => Entry::delete(key(k as u32), seq + 1),
                        _ => unreachable!(),
                    };
                    loop {
                        let status = m.stall_status();
                        match m.put_local(e.clone()) {
                            PutOutcome::Ack { .. } => break,
                            PutOutcome::Blocked(r) => {
                                prop_assert!(status.holds(r));
                                if let Some(j) = running.first().copied() {
                                    if m.step(j, &mut d).unwrap() == JobStep::Done {
                                        running.remove(0);
                                    }
                                    d.drain();
                                } else {
                                    running.extend(m.start_flush());
                                    running.extend(m.start_compaction());
                                    prop_assert!(!running.is_empty());
                                }
                            }
                        }
                    }
                    seq += 1;
                    match e.tombstone {
                        true => oracle.remove(&e.key),
                        false => oracle.insert(e.key.clone(), e.value.clone()),
                    };
                }
                Op::Get(k) => {
                    let got = m.get_local(&key(k as u32), &mut d).unwrap().entry.and_then(|e| e.visible().cloned());
                    prop_assert_eq!(got.as_ref(), oracle.get(&key(k as u32)));
                }
                Op::Background => {
                    running.extend(m.start_flush());
                    while let Some(j) = m.start_compaction() {
                        running.push(j);
                    }
                    for j in running.clone() {
                        if m.step(j, &mut d).unwrap() == JobStep::Done {
                            running.retain(|x| *x != j);
                        }
                    }
                    d.drain();
                    m.check_invariants().map_err(TestCaseError::fail)?;
                }
            }
        }
        for j in running {
            m.run_job(j, &mut d).unwrap();
        }
        m.flush_all(&mut d).unwrap();
        m.check_invariants().map_err(TestCaseError::fail)?;
        prop_assert_eq!(m.visible(d.media()), oracle);
        d.check_regions(&m.extents()).map_err(TestCaseError::fail)?;
    }
}
