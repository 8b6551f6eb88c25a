use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use super::LatencyModel;

/// A message that has reached its destination on the simulated clock.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery<T> {
    pub at_us: u64,
    pub source: u32,
    pub destination: u32,
    pub payload: T,
}

#[derive(Debug)]
struct InFlight<T> {
    at_us: u64,
    seq: u64,
    source: u32,
    destination: u32,
    payload: T,
}

impl<T> PartialEq for InFlight<T> {
    fn eq(&self, other: &Self) -> bool {
        (self.at_us, self.seq) == (other.at_us, other.seq)
    }
}

impl<T> Eq for InFlight<T> {}

impl<T> PartialOrd for InFlight<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for InFlight<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_us, self.seq).cmp(&(other.at_us, other.seq))
    }
}

/// In-memory transport on a simulated microsecond clock.
///
/// Reliable and FIFO per ordered link: a message is never delivered before an
/// earlier message on the same link, even when its latency draw is smaller.
/// Ties in delivery time resolve by send order, so runs are reproducible.
#[derive(Debug)]
pub struct SimTransport<T> {
    latency: LatencyModel,
    queue: BinaryHeap<Reverse<InFlight<T>>>,
    sent_per_link: HashMap<(u32, u32), u64>,
    last_delivery: HashMap<(u32, u32), u64>,
    seq: u64,
}

impl<T> SimTransport<T> {
    pub fn new(latency: LatencyModel) -> Self {
        SimTransport {
            latency,
            queue: BinaryHeap::new(),
            sent_per_link: HashMap::new(),
            last_delivery: HashMap::new(),
            seq: 0,
        }
    }

    pub fn latency(&self) -> &LatencyModel {
        &self.latency
    }

    /// Schedules `payload`; returns its delivery time.
    pub fn send(&mut self, now_us: u64, source: u32, destination: u32, payload: T) -> u64 {
        let link = (source, destination);
        let index = self.sent_per_link.entry(link).or_insert(0);
        let delay = self.latency.delay_us(source, destination, *index);
        *index += 1;
        let last = self.last_delivery.entry(link).or_insert(0);
        let at_us = (now_us + delay).max(*last);
        *last = at_us;
        self.queue.push(Reverse(InFlight { at_us, seq: self.seq, source, destination, payload }));
        self.seq += 1;
        at_us
    }

    pub fn next_delivery_at(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(m)| m.at_us)
    }

    /// Pops the earliest message if it is due at or before `now_us`.
    pub fn pop_due(&mut self, now_us: u64) -> Option<Delivery<T>> {
        if self.next_delivery_at()? > now_us {
            return None;
        }
        let Reverse(m) = self.queue.pop()?;
        Some(Delivery { at_us: m.at_us, source: m.source, destination: m.destination, payload: m.payload })
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Drops every in-flight message on the link in either direction.
    pub fn cut(&mut self, a: u32, b: u32) {
        let kept: Vec<_> = std::mem::take(&mut self.queue)
            .into_iter()
            .filter(|Reverse(m)| !((m.source, m.destination) == (a, b) || (m.source, m.destination) == (b, a)))
            .collect();
        self.queue = kept.into_iter().collect();
    }
}
