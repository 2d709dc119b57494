use hybridkv::accel::Policy;
use hybridkv::bench::{self, RunConfig, WorkloadKind};
use hybridkv::query;

fn short(kind: WorkloadKind, policy: Policy, secs: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(kind).with_policy(policy);
    cfg.workload.duration_us = secs * 1_000_000;
    cfg
}

#[test]
fn zero_duration_yields_empty_report() {
    let run = bench::run(&short(WorkloadKind::A, Policy::KvAccel, 0)).unwrap();
    assert!(run.samples.is_empty());
    assert_eq!((run.report.writes, run.report.reads, run.report.stall_intervals), (0, 0, 0));
    assert_eq!(run.report.p99_write_us, None);
    assert_eq!(run.report.invariant_violation, None);
}

#[test]
fn report_totals_match_samples() {
    let run = bench::run(&short(WorkloadKind::B, Policy::KvAccel, 8)).unwrap();
    let r = &run.report;
    assert_eq!(run.samples.len(), 8);
    assert_eq!(r.writes, r.writes_main + r.writes_dev);
    assert_eq!(r.reads, r.reads_main + r.reads_dev);
    assert_eq!(r.writes, run.samples.iter().map(|s| s.writes).sum::<u64>());
    assert_eq!(r.reads, run.samples.iter().map(|s| s.reads).sum::<u64>());
    let link: u64 = run.samples.iter().map(|s| s.block_h2d + s.block_d2h + s.kv_h2d + s.kv_d2h).sum();
    assert_eq!(link, r.block_bytes + r.kv_bytes);
    assert!(r.reads > 0 && r.reads * 9 <= r.writes + 9);
}

#[test]
fn baselines_never_touch_the_kv_interface() {
    for policy in [Policy::BaselineStall, Policy::BaselineSlowdown] {
        let run = bench::run(&short(WorkloadKind::A, policy, 20)).unwrap();
        assert_eq!(run.report.writes_dev, 0, "{policy:?}");
        assert_eq!(run.report.kv_bytes, 0, "{policy:?}");
        assert!(run.store.device().dev_lsm().is_empty());
    }
}

#[test]
fn slowdown_policy_sleeps_instead_of_blocking() {
    let run = bench::run(&short(WorkloadKind::A, Policy::BaselineSlowdown, 20)).unwrap();
    assert!(run.report.slowdowns > 0);
    let stall = bench::run(&short(WorkloadKind::A, Policy::BaselineStall, 20)).unwrap();
    assert_eq!(stall.report.slowdowns, 0);
    assert!(stall.report.blocked_writes > 0);
}

#[test]
fn workload_d_issues_seek_plus_next_ranges() {
    let mut cfg = short(WorkloadKind::D, Policy::KvAccel, 60);
    cfg.workload.preload_writes = 3000;
    cfg.workload.range_queries = 25;
    let mut run = bench::run(&cfg).unwrap();
    assert_eq!(run.report.writes, 3000);
    assert_eq!(run.report.ranges, 25);
    let r = query::range(&mut run.store, b"", 1024).unwrap();
    assert_eq!(r.items.len(), 1025);
    assert!(r.items.windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn config_file_overrides_preset_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.conf");
    std::fs::write(&path, "# trial\nworkload = C\nduration_s = 7\ncompaction_workers = 3\nhost_put_us = 900\n").unwrap();
    let cfg = RunConfig::load(&path, WorkloadKind::A).unwrap();
    assert_eq!(cfg.workload.kind, WorkloadKind::C);
    assert_eq!(cfg.workload.duration_us, 7_000_000);
    assert_eq!(cfg.lsm.compaction_workers, 3);
    assert_eq!(cfg.host.put_us, 900);

    std::fs::write(&path, "no_such_key = 1\n").unwrap();
    assert!(RunConfig::load(&path, WorkloadKind::A).is_err());
}

#[test]
fn csv_round_trips() {
    let run = bench::run(&short(WorkloadKind::A, Policy::KvAccel, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    bench::write_csv(&path, &run.samples).unwrap();
    let back = bench::read_csv(&path).unwrap();
    assert_eq!(back.len(), run.samples.len());
    for (a, b) in back.iter().zip(&run.samples) {
        assert_eq!((a.writes, a.kv_h2d, a.stall_ticks), (b.writes, b.kv_h2d, b.stall_ticks));
        assert!((a.device_util - b.device_util).abs() < 1e-6);
    }
    let again = dir.path().join("b.csv");
    bench::write_csv(&again, &back).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
