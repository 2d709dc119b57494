use super::LsmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Verdict {
    Normal,
    Slowdown,
    Stall,
}

/// Why a write was blocked. Each maps to one stop condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum StallReason {
    FlushBacklog,
    L0Stop,
    PendingBytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StallStatus {
    pub l0_count: usize,
    pub imt_count: usize,
    pub pending_compaction_bytes: u64,
    pub verdict: Verdict,
    pub flush_backlog: bool,
    pub l0_stop: bool,
    pub pending_stop: bool,
    pub l0_slowdown: bool,
    pub pending_slowdown: bool,
}

impl StallStatus {
    pub fn evaluate(cfg: &LsmConfig, l0_count: usize, imt_count: usize, pending: u64) -> Self {
        let flush_backlog = imt_count >= cfg.max_imts;
        let l0_stop = l0_count >= cfg.l0_stop;
        let pending_stop = pending >= cfg.pending_hard;
        let l0_slowdown = l0_count >= cfg.l0_slowdown;
        let pending_slowdown = pending >= cfg.pending_soft;
        let verdict = if flush_backlog || l0_stop || pending_stop {
            Verdict::Stall
        } else if l0_slowdown || pending_slowdown {
            Verdict::Slowdown
        } else {
            Verdict::Normal
        };
        Self {
            l0_count,
            imt_count,
            pending_compaction_bytes: pending,
            verdict,
            flush_backlog,
            l0_stop,
            pending_stop,
            l0_slowdown,
            pending_slowdown,
        }
    }

    /// First stop condition that holds, in flush, L0, pending-bytes order.
    pub fn stop_reason(&self) -> Option<StallReason> {
        if self.flush_backlog {
            Some(StallReason::FlushBacklog)
        } else if self.l0_stop {
            Some(StallReason::L0Stop)
        } else if self.pending_stop {
            Some(StallReason::PendingBytes)
        } else {
            None
        }
    }

    pub fn holds(&self, reason: StallReason) -> bool {
        match reason {
            StallReason::FlushBacklog => self.flush_backlog,
            StallReason::L0Stop => self.l0_stop,
            StallReason::PendingBytes => self.pending_stop,
        }
    }
}
