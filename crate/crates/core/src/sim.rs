//! Discrete-event engine: virtual clock, ordered event queue and seeded
//! per-node random streams.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Simulated time in whole microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            SimTime(0)
        } else {
            SimTime((s * 1e6).round() as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(u64);

/// Who an event is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Target {
    Global,
    Node(usize),
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub at: SimTime,
    pub seq: u64,
    pub target: Target,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn id(&self) -> EventId {
        EventId(self.seq)
    }
}

struct Entry<P>(Event<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seq) == (other.0.at, other.0.seq)
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.at, self.0.seq).cmp(&(other.0.at, other.0.seq))
    }
}

/// Priority queue of events keyed by `(at, seq)`.
///
/// Cancellation is lazy: cancelled ids are remembered and skipped on pop.
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Entry<P>>>,
    cancelled: BTreeSet<u64>,
    next_seq: u64,
    now: SimTime,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: BTreeSet::new(),
            next_seq: 0,
            now: SimTime::ZERO,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enqueue `payload` for dispatch at `at`.
    ///
    /// # Panics
    /// Scheduling into the past is a programming error and aborts the run.
    pub fn schedule(&mut self, at: SimTime, target: Target, payload: P) -> EventId {
        assert!(
            at >= self.now,
            "event scheduled in the past: at={at} now={}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry(Event {
            at,
            seq,
            target,
            payload,
        })));
        EventId(seq)
    }

    /// Cancels a pending event. Returns false if it was already dispatched
    /// or cancelled.
    pub fn cancel(&mut self, id: EventId) -> bool {
        if id.0 >= self.next_seq {
            return false;
        }
        let pending = self.heap.iter().any(|Reverse(e)| e.0.seq == id.0);
        pending && self.cancelled.insert(id.0)
    }

    /// Pops the next live event with `at <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        loop {
            let Reverse(head) = self.heap.peek()?;
            if head.0.at > limit {
                return None;
            }
            let Reverse(Entry(ev)) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            self.now = ev.at;
            return Some(ev);
        }
    }

    /// Advances the clock to `t` without dispatching. Used when a run ends
    /// at a horizon later than the last event.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches every event with `at <= t_end` through `handler`, in
    /// `(at, seq)` order. The handler may schedule further events.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            handler(self, ev);
        }
        self.advance_to(t_end);
        count
    }
}

/// Seeded source of independent per-node random streams.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for node `node`. Streams share the seed but use distinct
    /// ChaCha stream ids, so draws on one never shift another.
    pub fn node_stream(&self, node: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(node as u64 + 1);
        rng
    }
}
