//! Discrete-event engine: a virtual nanosecond clock, a single global event
//! queue ordered by `(fire_at, seq)`, and a seeded generator for the modeled
//! nondeterminism.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded through
//! `SeedableRng::seed_from_u64`. ChaCha output is specified bit-for-bit, so a
//! given seed yields the same draw sequence on every platform. Permutations
//! use rand's Fisher-Yates `SliceRandom::shuffle`; the versions are pinned by
//! `Cargo.lock`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Simulated time in nanoseconds.
pub type SimTime = u64;

/// Monotone virtual clock.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn now(&self) -> SimTime {
        self.now
    }

    fn advance_to(&mut self, t: SimTime) {
        assert!(
            t >= self.now,
            "clock moved backwards: now={} next={}",
            self.now,
            t
        );
        self.now = t;
    }
}

/// A fired (or pending) event with its ordering key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub kind: K,
}

struct Entry<K> {
    fire_at: SimTime,
    seq: u64,
    kind: K,
}

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        (self.fire_at, self.seq) == (other.fire_at, other.seq)
    }
}
impl<K> Eq for Entry<K> {}
impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<K> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

/// Priority queue of events plus the clock it drives.
pub struct EventQueue<K> {
    clock: SimClock,
    heap: BinaryHeap<Reverse<Entry<K>>>,
    next_seq: u64,
    fired: u64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        Self {
            clock: SimClock::default(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            fired: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    /// Enqueues `kind` to fire at `fire_at`; returns the assigned sequence number.
    ///
    /// Scheduling in the past is a logic error and aborts.
    pub fn schedule(&mut self, fire_at: SimTime, kind: K) -> u64 {
        assert!(
            fire_at >= self.clock.now(),
            "event scheduled in the past: now={} fire_at={}",
            self.clock.now(),
            fire_at
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry { fire_at, seq, kind }));
        seq
    }

    /// Schedules relative to the current time.
    pub fn schedule_in(&mut self, delay: SimTime, kind: K) -> u64 {
        self.schedule(self.clock.now() + delay, kind)
    }

    /// Pops the minimum `(fire_at, seq)` event and moves the clock to it.
    /// `None` means the simulation is finished.
    pub fn advance(&mut self) -> Option<Event<K>> {
        let Reverse(e) = self.heap.pop()?;
        self.clock.advance_to(e.fire_at);
        self.fired += 1;
        Some(Event {
            fire_at: e.fire_at,
            seq: e.seq,
            kind: e.kind,
        })
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.fire_at)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn scheduled(&self) -> u64 {
        self.next_seq
    }

    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Every scheduled event has either fired or is still queued.
    pub fn conserved(&self) -> bool {
        self.fired + self.heap.len() as u64 == self.next_seq
    }
}

/// Seeded ChaCha8 generator.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform draw in `[0, bound)`; `bound` must be nonzero.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.inner.gen_range(0..bound)
    }

    /// Uniform draw in `[0, max]`.
    pub fn up_to(&mut self, max: u64) -> u64 {
        self.inner.gen_range(0..=max)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// A seeded permutation of `0..n`.
pub fn shuffled_order(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
}
