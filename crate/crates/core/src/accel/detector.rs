use crate::lsm::{StallStatus, Verdict};
use crate::sim::Micros;

/// Periodic stall detector. Also tracks the quiet streak used by lazy rollback.
#[derive(Debug, Clone)]
pub struct Detector {
    pub period_us: Micros,
    pub ticks: u64,
    last: Option<StallStatus>,
    last_tick: Option<Micros>,
    writes_at_last_tick: u64,
    quiet_since: Option<Micros>,
}

impl Detector {
    pub fn new(period_us: Micros) -> Self {
        Self {
            period_us,
            ticks: 0,
            last: None,
            last_tick: None,
            writes_at_last_tick: 0,
            quiet_since: None,
        }
    }

    pub fn last(&self) -> Option<&StallStatus> {
        self.last.as_ref()
    }

    /// Records a snapshot. `writes` is the store's running count of incoming writes.
    pub fn observe(&mut self, now: Micros, status: StallStatus, writes: u64) {
        self.ticks += 1;
        let quiet = status.verdict == Verdict::Normal && writes == self.writes_at_last_tick;
        self.quiet_since = match (quiet, self.quiet_since) {
            (true, Some(t)) => Some(t),
            (true, None) => Some(self.last_tick.unwrap_or(now)),
            (false, _) => None,
        };
        self.writes_at_last_tick = writes;
        self.last_tick = Some(now);
        self.last = Some(status);
    }

    /// Length of the current quiet streak.
    pub fn quiet_for(&self, now: Micros) -> Micros {
        self.quiet_since.map_or(0, |t| now - t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsm::LsmConfig;

    #[test]
    fn quiet_streak_needs_normal_verdict_and_no_writes() {
        let normal = StallStatus::evaluate(&LsmConfig::default(), 0, 0, 0);
        let stalled = StallStatus::evaluate(&LsmConfig::default(), 100, 0, 0);
        let mut d = Detector::new(100_000);
        d.observe(0, normal, 0);
        d.observe(100_000, normal, 0);
        assert_eq!(d.quiet_for(100_000), 100_000);
        d.observe(200_000, normal, 5);
        assert_eq!(d.quiet_for(200_000), 0);
        d.observe(300_000, stalled, 5);
        assert_eq!(d.quiet_for(300_000), 0);
        for t in 4..=24 {
            d.observe(t * 100_000, normal, 5);
        }
        assert_eq!(d.quiet_for(2_400_000), 2_100_000);
        assert_eq!(d.ticks, 25);
    }
}
