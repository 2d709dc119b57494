//! Virtual clock and event queue.
//!
//! Time is an integer count of microseconds. Events fire in `(time, insertion
//! order)` order, so two events scheduled for the same instant fire FIFO.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use super::SimError;

/// Simulated time in microseconds.
pub type Micros = u64;

pub const MICROS_PER_SEC: Micros = 1_000_000;

/// Monotonic virtual clock.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Micros,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Moves the clock forward. Moving backwards is a logic error.
    pub fn advance_to(&mut self, t: Micros) {
        assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(u64);

/// A fired event: when it fired, its id, and its payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fired<E> {
    pub time: Micros,
    pub id: EventId,
    pub event: E,
}

#[derive(Debug)]
struct Slot<E> {
    time: Micros,
    id: u64,
    event: E,
}

impl<E> PartialEq for Slot<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.id == other.id
    }
}
impl<E> Eq for Slot<E> {}
impl<E> PartialOrd for Slot<E> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Slot<E> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.id).cmp(&(other.time, other.id))
    }
}

/// Discrete-event queue bound to a [`VirtualClock`].
#[derive(Debug)]
pub struct EventQueue<E> {
    clock: VirtualClock,
    heap: BinaryHeap<Reverse<Slot<E>>>,
    cancelled: HashSet<u64>,
    next_id: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            clock: VirtualClock::new(),
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            next_id: 0,
        }
    }

    pub fn now(&self) -> Micros {
        self.clock.now()
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Schedules `event` at absolute time `fire_time`.
    pub fn schedule(&mut self, fire_time: Micros, event: E) -> Result<EventId, SimError> {
        if fire_time < self.now() {
            return Err(SimError::ScheduledInPast {
                fire_time,
                now: self.now(),
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(Reverse(Slot {
            time: fire_time,
            id,
            event,
        }));
        Ok(EventId(id))
    }

    /// Schedules `event` `delay` microseconds from now.
    pub fn schedule_in(&mut self, delay: Micros, event: E) -> EventId {
        let t = self.now() + delay;
        self.schedule(t, event).expect("relative schedule is never in the past")
    }

    /// Cancels a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_id {
            return false;
        }
        if !self.heap.iter().any(|Reverse(s)| s.id == id.0) {
            return false;
        }
        self.cancelled.insert(id.0)
    }

    fn skip_cancelled(&mut self) {
        while let Some(Reverse(top)) = self.heap.peek() {
            if self.cancelled.remove(&top.id) {
                self.heap.pop();
            } else {
                break;
            }
        }
    }

    /// Fire time of the next live event.
    pub fn peek_time(&mut self) -> Option<Micros> {
        self.skip_cancelled();
        self.heap.peek().map(|Reverse(s)| s.time)
    }

    /// Pops the next event if it fires at or before `deadline`, advancing the clock to it.
    pub fn pop_until(&mut self, deadline: Micros) -> Option<Fired<E>> {
        match self.peek_time() {
            Some(t) if t <= deadline => {
                let Reverse(slot) = self.heap.pop().expect("peeked");
                self.clock.advance_to(slot.time);
                Some(Fired {
                    time: slot.time,
                    id: EventId(slot.id),
                    event: slot.event,
                })
            }
            _ => None,
        }
    }

    /// Moves the clock to `t` without firing anything. `t` must not skip past a pending event.
    pub fn advance_clock(&mut self, t: Micros) {
        if let Some(next) = self.peek_time() {
            debug_assert!(t <= next, "advance_clock skips a pending event");
        }
        self.clock.advance_to(t);
    }

    /// Fires every event with `fire_time <= deadline` and leaves the clock at `deadline`.
    pub fn advance_until(&mut self, deadline: Micros) -> Result<Vec<Fired<E>>, SimError> {
        if deadline < self.now() {
            return Err(SimError::ScheduledInPast {
                fire_time: deadline,
                now: self.now(),
            });
        }
        let mut fired = Vec::new();
        while let Some(ev) = self.pop_until(deadline) {
            fired.push(ev);
        }
        self.clock.advance_to(deadline);
        Ok(fired)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delay_fires_before_later_events() {
        let mut q = EventQueue::new();
        q.schedule(10, "later").unwrap();
        q.schedule(0, "tick").unwrap();
        let fired = q.advance_until(100).unwrap();
        assert_eq!(fired[0].event, "tick");
        assert_eq!(fired[1].event, "later");
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..5 {
            q.schedule(7, i).unwrap();
        }
        let order: Vec<_> = q.advance_until(7).unwrap().into_iter().map(|f| f.event).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rejects_past_events() {
        let mut q = EventQueue::<()>::new();
        q.advance_until(5).unwrap();
        assert!(matches!(
            q.schedule(4, ()),
            Err(SimError::ScheduledInPast { fire_time: 4, now: 5 })
        ));
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut q = EventQueue::<()>::new();
        let fired = q.advance_until(1_000_000).unwrap();
        assert!(fired.is_empty());
        assert_eq!(q.now(), 1_000_000);
    }

    #[test]
    fn single_event_fires_once() {
        let mut q = EventQueue::new();
        q.schedule(500, 'x').unwrap();
        assert_eq!(q.advance_until(1000).unwrap().len(), 1);
        assert!(q.advance_until(2000).unwrap().is_empty());
        assert_eq!(q.now(), 2000);
    }

    #[test]
    fn cancelled_events_do_not_fire() {
        let mut q = EventQueue::new();
        let a = q.schedule(5, 'a').unwrap();
        q.schedule(6, 'b').unwrap();
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let fired: Vec<_> = q.advance_until(10).unwrap().into_iter().map(|f| f.event).collect();
        assert_eq!(fired, vec!['b']);
    }
}
