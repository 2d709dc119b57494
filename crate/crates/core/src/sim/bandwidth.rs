//! Interconnect bandwidth model.
//!
//! Every transfer crosses both the host bus and the device media, so the
//! effective service rate is `min(bus, device)`. Concurrent transfers split
//! that rate equally (processor sharing), recomputed on every arrival and
//! completion. Bytes are credited to one-second ledger bins as they move.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::queue::{Micros, MICROS_PER_SEC};
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Interface {
    Block,
    Kv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    HostToDevice,
    DeviceToHost,
}

const fn lane(iface: Interface, dir: Direction) -> usize {
    (match iface {
        Interface::Block => 0,
        Interface::Kv => 2,
    }) + match dir {
        Direction::HostToDevice => 0,
        Direction::DeviceToHost => 1,
    }
}

pub const LANES: [(Interface, Direction); 4] = [
    (Interface::Block, Direction::HostToDevice),
    (Interface::Block, Direction::DeviceToHost),
    (Interface::Kv, Direction::HostToDevice),
    (Interface::Kv, Direction::DeviceToHost),
];

/// Bytes moved per one-second interval, split by interface and direction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthLedger {
    bus_capacity: u64,
    device_capacity: u64,
    bins: Vec<[u64; 4]>,
}

impl BandwidthLedger {
    pub fn new(bus_capacity: u64, device_capacity: u64) -> Self {
        Self {
            bus_capacity,
            device_capacity,
            bins: Vec::new(),
        }
    }

    pub fn bus_capacity(&self) -> u64 {
        self.bus_capacity
    }

    pub fn device_capacity(&self) -> u64 {
        self.device_capacity
    }

    fn credit(&mut self, bin: usize, iface: Interface, dir: Direction, bytes: u64) {
        if self.bins.len() <= bin {
            self.bins.resize(bin + 1, [0; 4]);
        }
        self.bins[bin][lane(iface, dir)] += bytes;
    }

    pub fn num_intervals(&self) -> usize {
        self.bins.len()
    }

    pub fn interval_bytes(&self, bin: usize, iface: Interface, dir: Direction) -> u64 {
        self.bins.get(bin).map_or(0, |b| b[lane(iface, dir)])
    }

    pub fn interval_total(&self, bin: usize) -> u64 {
        self.bins.get(bin).map_or(0, |b| b.iter().sum())
    }

    pub fn total(&self, iface: Interface, dir: Direction) -> u64 {
        self.bins.iter().map(|b| b[lane(iface, dir)]).sum()
    }

    pub fn grand_total(&self) -> u64 {
        self.bins.iter().flat_map(|b| b.iter()).sum()
    }

    /// Fraction of the bus capacity used in interval `bin`.
    pub fn bus_utilization(&self, bin: usize) -> f64 {
        self.interval_total(bin) as f64 / self.bus_capacity as f64
    }

    /// Fraction of the device capacity used in interval `bin`.
    pub fn device_utilization(&self, bin: usize) -> f64 {
        self.interval_total(bin) as f64 / self.device_capacity as f64
    }

    /// True when no interval moved more bytes than either resource can carry in one second.
    pub fn within_capacity(&self) -> bool {
        let cap = self.bus_capacity.min(self.device_capacity);
        (0..self.bins.len()).all(|b| self.interval_total(b) <= cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransferId(u64);

#[derive(Debug, Clone)]
struct Active {
    iface: Interface,
    dir: Direction,
    remaining: u64,
}

/// Shared host–device link with fair-share bandwidth and a ledger.
#[derive(Debug, Clone)]
pub struct Interconnect {
    now: Micros,
    /// Bytes per microsecond.
    rate: u64,
    active: BTreeMap<u64, Active>,
    ledger: BandwidthLedger,
    next_id: u64,
    requested: u64,
    completed_bytes: u64,
}

impl Interconnect {
    /// Capacities are in bytes per second and must be whole multiples of 10^6.
    pub fn new(bus_capacity: u64, device_capacity: u64) -> Result<Self, SimError> {
        for cap in [bus_capacity, device_capacity] {
            if cap == 0 || cap % MICROS_PER_SEC != 0 {
                return Err(SimError::BadCapacity(cap));
            }
        }
        Ok(Self {
            now: 0,
            rate: bus_capacity.min(device_capacity) / MICROS_PER_SEC,
            active: BTreeMap::new(),
            ledger: BandwidthLedger::new(bus_capacity, device_capacity),
            next_id: 0,
            requested: 0,
            completed_bytes: 0,
        })
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn ledger(&self) -> &BandwidthLedger {
        &self.ledger
    }

    pub fn in_flight(&self) -> usize {
        self.active.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    /// Total bytes requested by every transfer started so far.
    pub fn requested_bytes(&self) -> u64 {
        self.requested
    }

    /// Total bytes of transfers that have fully completed.
    pub fn completed_bytes(&self) -> u64 {
        self.completed_bytes
    }

    /// Starts a transfer and returns its id plus its projected completion
    /// time, assuming no further arrivals.
    pub fn charge_transfer(
        &mut self,
        iface: Interface,
        dir: Direction,
        bytes: u64,
    ) -> Result<(TransferId, Micros), SimError> {
        if bytes == 0 {
            return Err(SimError::EmptyTransfer);
        }
        let id = self.next_id;
        self.next_id += 1;
        self.requested += bytes;
        self.active.insert(
            id,
            Active {
                iface,
                dir,
                remaining: bytes,
            },
        );
        let done = self.projected_completion(id);
        Ok((TransferId(id), done))
    }

    fn projected_completion(&self, id: u64) -> Micros {
        let mut sim = self.clone();
        loop {
            let done = sim.advance_to(sim.next_completion().expect("transfer is active"));
            if let Some((_, t)) = done.iter().find(|(tid, _)| tid.0 == id) {
                return *t;
            }
        }
    }

    /// Earliest time at which some active transfer may finish.
    pub fn next_completion(&self) -> Option<Micros> {
        let n = self.active.len() as u64;
        self.active
            .values()
            .map(|a| (a.remaining * n).div_ceil(self.rate))
            .min()
            .map(|d| self.now + d.max(1))
    }

    /// Moves time forward to `t`, returning transfers completed on the way.
    pub fn advance_to(&mut self, t: Micros) -> Vec<(TransferId, Micros)> {
        assert!(t >= self.now, "interconnect moved backwards");
        let mut done = Vec::new();
        while self.now < t {
            if self.active.is_empty() {
                self.now = t;
                break;
            }
            let n = self.active.len() as u64;
            let to_completion = self
                .active
                .values()
                .map(|a| (a.remaining * n).div_ceil(self.rate))
                .min()
                .unwrap()
                .max(1);
            let to_boundary = MICROS_PER_SEC - self.now % MICROS_PER_SEC;
            let step = to_completion.min(to_boundary).min(t - self.now);
            let bin = (self.now / MICROS_PER_SEC) as usize;
            let budget = self.rate * step;
            let (share, extra) = (budget / n, budget % n);
            for (i, a) in self.active.values_mut().enumerate() {
                let give = (share + u64::from((i as u64) < extra)).min(a.remaining);
                a.remaining -= give;
                if give > 0 {
                    self.ledger.credit(bin, a.iface, a.dir, give);
                }
            }
            self.now += step;
            let finished: Vec<u64> = self
                .active
                .iter()
                .filter(|(_, a)| a.remaining == 0)
                .map(|(id, _)| *id)
                .collect();
            for id in finished {
                self.active.remove(&id);
                done.push((TransferId(id), self.now));
            }
        }
        self.completed_bytes = self.requested - self.active.values().map(|a| a.remaining).sum::<u64>();
        done
    }

    /// Runs until every active transfer is done. Returns the completion time of the last one.
    pub fn run_until_idle(&mut self) -> Micros {
        while let Some(t) = self.next_completion() {
            self.advance_to(t);
        }
        self.now
    }
}
