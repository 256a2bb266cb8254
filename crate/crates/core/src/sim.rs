//! Discrete-event backbone: integer-nanosecond virtual clock, a FIFO-stable
//! event queue and seeded, splittable random streams.
//!
//! Every simulation instance owns exactly one [`Scheduler`]. Events with the
//! same `fire_at` run in insertion order; this ordering is part of the replay
//! contract and is relied on by the message plane (policy switches scheduled
//! before a message at the same instant apply to that message).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SimError;

pub const NANOS_PER_SEC: u64 = 1_000_000_000;
pub const NANOS_PER_MS: u64 = 1_000_000;

/// Nanoseconds since simulation epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VirtualTime(u64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0);
    pub const MAX: VirtualTime = VirtualTime(u64::MAX);

    pub const fn from_nanos(nanos: u64) -> Self {
        VirtualTime(nanos)
    }

    pub const fn from_millis(ms: u64) -> Self {
        VirtualTime(ms * NANOS_PER_MS)
    }

    pub const fn from_secs(s: u64) -> Self {
        VirtualTime(s * NANOS_PER_SEC)
    }

    /// Converts fractional seconds, rounding to the nearest nanosecond.
    /// Config values are converted through here exactly once at load.
    pub fn from_secs_f64(s: f64) -> Self {
        VirtualTime(secs_to_nanos(s))
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub const fn saturating_add(self, nanos: u64) -> Self {
        VirtualTime(self.0.saturating_add(nanos))
    }

    pub const fn saturating_sub(self, other: VirtualTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}s", self.0 / NANOS_PER_SEC, self.0 % NANOS_PER_SEC)
    }
}

pub fn secs_to_nanos(s: f64) -> u64 {
    if s <= 0.0 || !s.is_finite() {
        return 0;
    }
    (s * NANOS_PER_SEC as f64).round() as u64
}

/// Handle returned by [`Scheduler::schedule`]; permits cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

struct Entry<A> {
    fire_at: VirtualTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // BinaryHeap is a max-heap; invert so the earliest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Maps virtual time onto wall time for demos. `factor` virtual seconds pass
/// per wall second.
#[derive(Debug, Clone)]
pub struct Pacer {
    factor: f64,
    origin: Option<(Instant, VirtualTime)>,
}

impl Pacer {
    pub fn new(factor: f64) -> Self {
        Pacer {
            factor: factor.max(f64::MIN_POSITIVE),
            origin: None,
        }
    }

    fn wait_for(&mut self, t: VirtualTime) {
        let (wall0, virt0) = *self.origin.get_or_insert((Instant::now(), t));
        let elapsed_virtual = t.saturating_sub(virt0) as f64 / NANOS_PER_SEC as f64;
        let due = wall0 + Duration::from_secs_f64(elapsed_virtual / self.factor);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

/// Single-threaded event queue with a monotone virtual clock.
pub struct Scheduler<A> {
    now: VirtualTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<A>>,
    cancelled: HashSet<u64>,
    running: bool,
    executed: u64,
    pacer: Option<Pacer>,
}

impl<A> Default for Scheduler<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> Scheduler<A> {
    pub fn new() -> Self {
        Scheduler {
            now: VirtualTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            running: false,
            executed: 0,
            pacer: None,
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn set_pacer(&mut self, pacer: Option<Pacer>) {
        self.pacer = pacer;
    }

    /// Number of events executed so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    /// Number of live (not cancelled) events still queued.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn is_idle(&self) -> bool {
        self.pending() == 0
    }

    pub fn schedule(&mut self, at: VirtualTime, action: A) -> Result<EventHandle, SimError> {
        if at < self.now {
            return Err(SimError::SchedulingInPast { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at: at,
            seq,
            action,
        });
        Ok(EventHandle(seq))
    }

    /// Schedules `delay_ns` after the current clock. Never fails.
    pub fn schedule_in(&mut self, delay_ns: u64, action: A) -> EventHandle {
        let at = self.now.saturating_add(delay_ns);
        self.schedule(at, action)
            .expect("now + delay is never in the past")
    }

    /// Returns false if the event already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        if !self.heap.iter().any(|e| e.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pops the next event with `fire_at <= end`, advancing the clock to it.
    pub fn pop_due(&mut self, end: VirtualTime) -> Option<(VirtualTime, A)> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_at > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now);
            if let Some(pacer) = self.pacer.as_mut() {
                pacer.wait_for(entry.fire_at);
            }
            self.now = entry.fire_at;
            self.executed += 1;
            return Some((entry.fire_at, entry.action));
        }
    }

    /// Closes a bounded run: the clock moves to `end` when events remain
    /// beyond it, and otherwise stays on the last executed event.
    pub fn settle(&mut self, end: VirtualTime) -> VirtualTime {
        if !self.is_idle() && end > self.now {
            self.now = end;
        }
        self.now
    }

    /// Executes every event with `fire_at <= end` in `(fire_at, seq)` order.
    ///
    /// The handler may schedule further events. Returns the final clock:
    /// `end`, or the time of the last executed event if the queue drains.
    pub fn run_until<F>(&mut self, end: VirtualTime, mut handler: F) -> VirtualTime
    where
        F: FnMut(&mut Scheduler<A>, VirtualTime, A),
    {
        assert!(!self.running, "run_until re-entered");
        self.running = true;
        while let Some((now, action)) = self.pop_due(end) {
            handler(self, now, action);
        }
        self.running = false;
        self.settle(end)
    }
}

/// Deterministic counter-based random stream.
///
/// The key is `SHA-256(seed_le || label)`, feeding a ChaCha8 block cipher in
/// counter mode. Substreams hash the parent key with the child label, so the
/// same `(seed, label path)` always yields the same sequence on every
/// platform, and sibling labels give independent streams.
#[derive(Clone)]
pub struct RandomStream {
    seed: u64,
    label: String,
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl fmt::Debug for RandomStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomStream")
            .field("seed", &self.seed)
            .field("label", &self.label)
            .finish()
    }
}

impl RandomStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        Self::from_key(seed, label.to_string(), hasher.finalize().into())
    }

    fn from_key(seed: u64, label: String, key: [u8; 32]) -> Self {
        RandomStream {
            seed,
            label,
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Deterministic child stream. Independent of how many draws the parent
    /// has already made.
    pub fn substream(&self, label: &str) -> RandomStream {
        assert!(!label.is_empty(), "substream label must be non-empty");
        let mut hasher = Sha256::new();
        hasher.update(self.key);
        hasher.update([0x2f]);
        hasher.update(label.as_bytes());
        Self::from_key(
            self.seed,
            format!("{}/{}", self.label, label),
            hasher.finalize().into(),
        )
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in the closed range `[lo, hi]`, by rejection so the
    /// result carries no modulo bias.
    pub fn uniform_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo;
        if span == u64::MAX {
            return self.next_u64();
        }
        let n = span + 1;
        let zone = u64::MAX - (u64::MAX % n) - 1;
        loop {
            let x = self.next_u64();
            if x <= zone {
                return lo + x % n;
            }
        }
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.uniform_inclusive(0, n as u64 - 1) as usize
    }
}

/// Convenience: derive a named substream of the root for `seed`.
pub fn substream(root: &RandomStream, label: &str) -> RandomStream {
    root.substream(label)
}
