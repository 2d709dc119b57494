use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hybridkv::accel::{Policy, RollbackMode};
use hybridkv::bench::{self, Cdf, RunConfig, RunReport, WorkloadKind};

#[derive(Parser)]
#[command(name = "hybridkv", version, about = "Virtual-time LSM store with write redirection to a dual-interface SSD")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one workload under one policy.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "kvaccel")]
        policy: Policy,
    },
    /// Run one workload under several policies and print a comparison.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "baseline-stall,baseline-slowdown,kvaccel")]
        policies: Vec<Policy>,
    },
    /// Utilization CDF over the stall intervals of per-interval CSV files.
    Cdf {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value = "A")]
    workload: WorkloadKind,
    #[arg(long)]
    rollback_mode: Option<RollbackMode>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Host compaction workers.
    #[arg(long)]
    workers: Option<usize>,
    /// Virtual seconds.
    #[arg(long)]
    duration: Option<u64>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p, self.workload).map_err(|e| format!("{}: {e}", p.display()))?,
            None => RunConfig::preset(self.workload),
        };
        cfg = cfg.with_seed(self.seed);
        if let Some(m) = self.rollback_mode {
            cfg = cfg.with_rollback_mode(m);
        }
        if let Some(w) = self.workers {
            cfg = cfg.with_workers(w);
        }
        if let Some(d) = self.duration {
            cfg.workload.duration_us = d * 1_000_000;
        }
        Ok(cfg)
    }
}

fn run_one(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport, String> {
    let run = bench::run(cfg).map_err(|e| e.to_string())?;
    let r = &run.report;
    let name = format!(
        "{}-{}-{}-w{}-s{}",
        r.workload, r.policy, r.rollback_mode, r.compaction_workers, r.seed
    );
    std::fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
    let csv = out_dir.join(format!("{name}.csv"));
    bench::write_csv(&csv, &run.samples).map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(r).map_err(|e| e.to_string())?;
    std::fs::write(out_dir.join(format!("{name}.json")), json).map_err(|e| e.to_string())?;
    for line in r.summary_lines() {
        println!("{line}");
    }
    println!("wrote {}", csv.display());
    Ok(run.report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { common, policy } => common
            .config()
            .and_then(|cfg| run_one(&cfg.with_policy(policy), &common.out_dir))
            .map(|r| vec![r]),
        Cmd::Compare { common, policies } => common.config().and_then(|cfg| {
            let reports = policies
                .iter()
                .map(|p| run_one(&cfg.clone().with_policy(*p), &common.out_dir))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", bench::compare_table(&reports));
            Ok(reports)
        }),
        Cmd::Cdf { csv } => {
            let mut out = Ok(Vec::new());
            for p in &csv {
                let cdf = bench::read_csv(p)
                    .map_err(|e| format!("{}: {e}", p.display()))
                    .and_then(|s| Cdf::of_stalls(&s).map_err(|e| format!("{}: {e}", p.display())));
                match cdf {
                    Ok(c) => {
                        println!("# {} ({} stall intervals)", p.display(), c.len());
                        print!("{}", bench::cdf_table(&c));
                    }
                    Err(e) => {
                        out = Err(e);
                        break;
                    }
                }
            }
            out
        }
    };
    match result {
        Ok(reports) => match reports.iter().find_map(|r| r.invariant_violation.as_ref()) {
            Some(v) => {
                eprintln!("invariant violation: {v}");
                ExitCode::from(2)
            }
            None => ExitCode::SUCCESS,
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
