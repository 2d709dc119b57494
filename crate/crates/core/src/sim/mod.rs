//! Deterministic virtual-time core: clock, event queue, bandwidth ledger and
//! the shared configuration file format.

mod bandwidth;
mod config;
mod queue;

pub use bandwidth::{BandwidthLedger, Direction, Interconnect, Interface, TransferId, LANES};
pub use config::{ConfigError, ConfigMap, SimConfig};
pub use queue::{EventId, EventQueue, Fired, Micros, VirtualClock, MICROS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("event scheduled at {fire_time}us but clock is already at {now}us")]
    ScheduledInPast { fire_time: Micros, now: Micros },
    #[error("transfer of zero bytes")]
    EmptyTransfer,
    #[error("capacity {0} B/s must be a positive multiple of 1000000")]
    BadCapacity(u64),
}
