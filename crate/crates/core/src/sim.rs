//! Discrete-event scheduler, simulation clock and the seeded random source.
//!
//! Events are ordered by `(time, seq)`: earlier times first, and events that
//! share a timestamp dispatch in insertion order. All event times are snapped
//! to a 1 µs grid so that arithmetic noise cannot reorder logically
//! simultaneous events.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use thiserror::Error;

/// Simulation time in seconds.
pub type SimTime = f64;

/// Timer resolution of the engine.
pub const TIME_QUANTUM: SimTime = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled in the past: t={at} < now={now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("invalid interval: lo={lo} > hi={hi}")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(SimTime),
    #[error("{0}")]
    Model(String),
}

/// Snaps a time onto the microsecond grid.
pub fn quantize(t: SimTime) -> SimTime {
    (t / TIME_QUANTUM).round() * TIME_QUANTUM
}

/// Coarse event classes, used for dispatch logs and statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PacketArrival,
    TimerExpiry,
    MobilityUpdate,
    AppSend,
    MetricSample,
}

/// Payloads carried by the scheduler report their class through this trait.
pub trait Classify {
    fn kind(&self) -> EventKind;
}

#[derive(Debug, Clone)]
pub struct Event<E> {
    pub time: SimTime,
    pub seq: u64,
    pub payload: E,
}

impl<E> PartialEq for Event<E> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<E> Eq for Event<E> {}

impl<E> PartialOrd for Event<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Event<E> {
    // Reversed: BinaryHeap is a max-heap and we pop the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Single-threaded event queue plus simulation clock.
#[derive(Debug)]
pub struct Scheduler<E> {
    queue: BinaryHeap<Event<E>>,
    now: SimTime,
    next_seq: u64,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Self {
            queue: BinaryHeap::new(),
            now: 0.0,
            next_seq: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Total number of events dispatched since construction.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    /// Enqueue `payload` at absolute time `at`.
    pub fn schedule(&mut self, at: SimTime, payload: E) -> Result<u64, SimError> {
        let at = quantize(at);
        if at < self.now || !at.is_finite() {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Event { time: at, seq, payload });
        Ok(seq)
    }

    /// Enqueue `payload` after a non-negative delay.
    pub fn schedule_in(&mut self, delay: SimTime, payload: E) -> Result<u64, SimError> {
        self.schedule(self.now + delay.max(0.0), payload)
    }

    /// Timers never fire sooner than one quantum after they are armed.
    pub fn schedule_timer(&mut self, delay: SimTime, payload: E) -> Result<u64, SimError> {
        self.schedule(self.now + delay.max(TIME_QUANTUM), payload)
    }

    /// Payloads still queued, in no particular order.
    pub fn pending(&self) -> impl Iterator<Item = &E> {
        self.queue.iter().map(|ev| &ev.payload)
    }

    /// Dispatches every event with `time <= horizon` through `handler`,
    /// then leaves the clock at `horizon`. Returns the dispatch count.
    ///
    /// A handler error aborts the run immediately.
    pub fn run_until<F>(&mut self, horizon: SimTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Self, Event<E>) -> Result<(), SimError>,
    {
        if !(horizon > 0.0) {
            return Err(SimError::InvalidHorizon(horizon));
        }
        let mut count = 0;
        while let Some(head) = self.queue.peek() {
            if head.time > horizon {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            self.dispatched += 1;
            count += 1;
            handler(self, ev)?;
        }
        self.now = self.now.max(horizon);
        Ok(count)
    }
}

/// Seeded pseudo-random source.
///
/// The generator is PCG-XSL-RR-128/64 in its MCG form (`Pcg64Mcg`): a 128-bit
/// multiplicative congruential state `s' = s * 0x2360_ED05_1FC6_5DA4_4385_DF64_9FCC_F645`
/// whose output is `rotr64(hi ^ lo, hi >> 58)`. Seeds are expanded from the
/// 64-bit seed by `rand_core`'s portable `seed_from_u64`. Floating draws use the
/// top 53 bits of each output, so sequences are identical on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: Pcg64Mcg,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: Pcg64Mcg::seed_from_u64(seed),
        }
    }

    /// An independent stream derived from this source's seed. Streams with
    /// different `stream` ids never share draws, so e.g. mobility decisions
    /// stay identical across TCP variants for a given seed.
    pub fn substream(&self, stream: u64) -> Self {
        Self::new(splitmix64(self.seed ^ splitmix64(stream.wrapping_add(0x9E37))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64, SimError> {
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(SimError::InvalidInterval { lo, hi });
        }
        Ok((lo + (hi - lo) * self.unit()).clamp(lo, hi))
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Bernoulli draw with success probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.unit() < p
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
