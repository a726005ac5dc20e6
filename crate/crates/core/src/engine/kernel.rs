//! Future-event set for the discrete-event simulator.
//!
//! Events are ordered by `(time, sequence number)`; the sequence number is
//! assigned at scheduling time, so events due at the same instant pop in the
//! order they were scheduled.

use std::cmp::Ordering;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy)]
struct SimTime(f64);

impl PartialEq for SimTime {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimTime {}

impl PartialOrd for SimTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimTime {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Handle to a scheduled event, used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventKey {
    time: SimTime,
    seq: u64,
}

impl EventKey {
    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn time(&self) -> f64 {
        self.time.0
    }
}

#[derive(Debug)]
pub struct EventQueue<T> {
    pending: BTreeMap<(SimTime, u64), T>,
    next_seq: u64,
}

impl<T> Default for EventQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> EventQueue<T> {
    pub fn new() -> Self {
        EventQueue {
            pending: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn schedule(&mut self, at: f64, payload: T) -> EventKey {
        debug_assert!(at.is_finite(), "event time must be finite");
        let key = EventKey {
            time: SimTime(at),
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.pending.insert((key.time, key.seq), payload);
        key
    }

    /// Removes a pending event; returns `None` if it already fired or was cancelled.
    pub fn cancel(&mut self, key: EventKey) -> Option<T> {
        self.pending.remove(&(key.time, key.seq))
    }

    pub fn pop(&mut self) -> Option<(f64, T)> {
        self.pending.pop_first().map(|((t, _), payload)| (t.0, payload))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.pending.keys().next().map(|(t, _)| t.0)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_schedule_order() {
        let mut q = EventQueue::new();
        q.schedule(2.0, "late");
        q.schedule(1.0, "first");
        q.schedule(1.0, "second");
        q.schedule(0.5, "earliest");
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|(_, p)| p).collect();
        assert_eq!(order, ["earliest", "first", "second", "late"]);
    }

    #[test]
    fn cancellation() {
        let mut q = EventQueue::new();
        let a = q.schedule(1.0, 'a');
        q.schedule(2.0, 'b');
        assert_eq!(q.cancel(a), Some('a'));
        assert_eq!(q.cancel(a), None);
        assert_eq!(q.peek_time(), Some(2.0));
        assert_eq!(q.pop(), Some((2.0, 'b')));
        assert!(q.is_empty());
    }
}
