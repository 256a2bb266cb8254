//! Bounded-queue xApp service model.
//!
//! One server, FIFO, fixed service time `1 / capacity`. The queue bound
//! counts every message in the system including the one in service. The
//! server clock is kept as an exact rational, scaled by the capacity in
//! milli-messages per second, so service times never drift.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::msgplane::{MessageEnvelope, MessageKind, ServiceIdentity};
use crate::sim::{secs_to_nanos, VirtualTime, NANOS_PER_SEC};
use crate::workloads::health::HealthProbe;

/// One service in scaled units (ns × milli-msg/s).
const SERVICE_SCALED: u128 = NANOS_PER_SEC as u128 * 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum XAppState {
    Starting,
    Running,
    Degraded,
    Failed,
    Terminated,
}

impl XAppState {
    pub fn serving(self) -> bool {
        matches!(self, XAppState::Running | XAppState::Degraded)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLoop {
    pub period_ms: f64,
    /// gNB the control messages address.
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XAppParams {
    #[serde(default = "default_capacity")]
    pub capacity_msgs_per_s: f64,
    #[serde(default = "default_queue_capacity")]
    pub queue_capacity: u32,
    #[serde(default = "default_startup_s")]
    pub startup_s: f64,
    #[serde(default = "default_teardown_s")]
    pub teardown_s: f64,
    #[serde(default)]
    pub control: Option<ControlLoop>,
    #[serde(default)]
    pub probe: Option<HealthProbe>,
}

fn default_capacity() -> f64 {
    600.0
}
fn default_queue_capacity() -> u32 {
    60
}
fn default_startup_s() -> f64 {
    2.0
}
fn default_teardown_s() -> f64 {
    1.0
}

impl Default for XAppParams {
    fn default() -> Self {
        XAppParams {
            capacity_msgs_per_s: default_capacity(),
            queue_capacity: default_queue_capacity(),
            startup_s: default_startup_s(),
            teardown_s: default_teardown_s(),
            control: None,
            probe: None,
        }
    }
}

impl XAppParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.capacity_msgs_per_s.is_finite() && self.capacity_msgs_per_s >= 0.001) {
            return Err(format!("capacity_msgs_per_s must be positive, got {}", self.capacity_msgs_per_s));
        }
        if self.queue_capacity == 0 {
            return Err("queue_capacity must be positive".into());
        }
        for (name, v) in [("startup_s", self.startup_s), ("teardown_s", self.teardown_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if let Some(c) = &self.control {
            if !(c.period_ms.is_finite() && c.period_ms > 0.0) {
                return Err(format!("control.period_ms must be positive, got {}", c.period_ms));
            }
        }
        if let Some(p) = &self.probe {
            p.validate()?;
        }
        Ok(())
    }

    pub fn startup_ns(&self) -> u64 {
        secs_to_nanos(self.startup_s)
    }

    pub fn teardown_ns(&self) -> u64 {
        secs_to_nanos(self.teardown_s)
    }
}

#[derive(Debug)]
pub enum Ingest {
    Accepted { completes_at: VirtualTime },
    Dropped(Box<MessageEnvelope>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct XAppCounters {
    pub arrivals: u64,
    pub processed: u64,
    pub dropped_by_queue: u64,
    pub controls_emitted: u64,
}

#[derive(Debug)]
pub struct XAppInstance {
    identity: ServiceIdentity,
    params: XAppParams,
    cap_milli: u64,
    state: XAppState,
    terminating: bool,
    queue: VecDeque<Box<MessageEnvelope>>,
    free_scaled: u128,
    counters: XAppCounters,
    history: Vec<(VirtualTime, XAppState)>,
}

impl XAppInstance {
    pub fn new(identity: ServiceIdentity, params: XAppParams, now: VirtualTime) -> Self {
        let cap_milli = (params.capacity_msgs_per_s * 1000.0).round() as u64;
        assert!(cap_milli > 0, "capacity must be positive");
        assert!(params.queue_capacity > 0, "queue capacity must be positive");
        XAppInstance {
            identity,
            params,
            cap_milli,
            state: XAppState::Starting,
            terminating: false,
            queue: VecDeque::new(),
            free_scaled: 0,
            counters: XAppCounters::default(),
            history: vec![(now, XAppState::Starting)],
        }
    }

    pub fn identity(&self) -> &ServiceIdentity {
        &self.identity
    }

    pub fn params(&self) -> &XAppParams {
        &self.params
    }

    pub fn state(&self) -> XAppState {
        self.state
    }

    pub fn is_terminating(&self) -> bool {
        self.terminating
    }

    pub fn counters(&self) -> XAppCounters {
        self.counters
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// State changes as `(time, new state)`, starting with STARTING.
    pub fn history(&self) -> &[(VirtualTime, XAppState)] {
        &self.history
    }

    pub fn set_state(&mut self, state: XAppState, now: VirtualTime) {
        if self.state != state {
            self.state = state;
            self.history.push((now, state));
        }
    }

    pub fn mark_terminating(&mut self) {
        self.terminating = true;
    }

    pub fn service_time_ns(&self) -> f64 {
        SERVICE_SCALED as f64 / self.cap_milli as f64
    }

    /// Offers a message. Accepted messages complete in FIFO order; the
    /// caller schedules a completion at `completes_at`.
    pub fn ingest(&mut self, env: Box<MessageEnvelope>, now: VirtualTime) -> Ingest {
        self.counters.arrivals += 1;
        if self.state == XAppState::Failed || self.queue.len() >= self.params.queue_capacity as usize {
            self.counters.dropped_by_queue += 1;
            return Ingest::Dropped(env);
        }
        let now_scaled = now.as_nanos() as u128 * self.cap_milli as u128;
        let start = self.free_scaled.max(now_scaled);
        self.free_scaled = start + SERVICE_SCALED;
        let completes_at = self.free_scaled.div_ceil(self.cap_milli as u128) as u64;
        self.queue.push_back(env);
        Ingest::Accepted {
            completes_at: VirtualTime::from_nanos(completes_at),
        }
    }

    /// Finishes the head-of-line message.
    pub fn complete(&mut self) -> Option<Box<MessageEnvelope>> {
        let env = self.queue.pop_front()?;
        self.counters.processed += 1;
        Some(env)
    }

    /// Empties the queue at teardown; the messages count as queue drops.
    pub fn flush(&mut self) -> Vec<Box<MessageEnvelope>> {
        let out: Vec<_> = self.queue.drain(..).collect();
        self.counters.dropped_by_queue += out.len() as u64;
        out
    }

    pub fn is_conserving(&self) -> bool {
        let c = self.counters;
        c.processed + self.queue.len() as u64 + c.dropped_by_queue == c.arrivals
    }

    /// Builds the next control message, or `None` if the instance is not
    /// allowed to emit.
    pub fn control_message(&mut self, msg_id: u64, now: VirtualTime) -> Option<MessageEnvelope> {
        if !self.state.serving() || self.terminating {
            return None;
        }
        let target = self.params.control.as_ref()?.target.clone();
        self.counters.controls_emitted += 1;
        Some(MessageEnvelope::new(
            msg_id,
            MessageKind::E2Control,
            self.identity.clone(),
            &target,
            now,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn instance(capacity: f64, queue: u32) -> XAppInstance {
        let mut x = XAppInstance::new(
            ServiceIdentity::new("kpimon", "v1", "ricxapp"),
            XAppParams {
                capacity_msgs_per_s: capacity,
                queue_capacity: queue,
                ..XAppParams::default()
            },
            VirtualTime::ZERO,
        );
        x.set_state(XAppState::Running, VirtualTime::ZERO);
        x
    }

    fn env(i: u64, at: u64) -> Box<MessageEnvelope> {
        Box::new(MessageEnvelope::new(
            i,
            MessageKind::E2Indication,
            ServiceIdentity::new("gnb-1", "e2", "ran"),
            "kpimon",
            VirtualTime::from_nanos(at),
        ))
    }

    /// Drives an instance with arrivals at `times`, completing messages as
    /// their departure instants pass. Returns (sojourns, drops).
    fn drive(x: &mut XAppInstance, times: &[u64]) -> (Vec<u64>, u64) {
        let mut pending: VecDeque<(u64, u64)> = VecDeque::new();
        let mut sojourn = Vec::new();
        let mut drops = 0;
        for (i, &t) in times.iter().enumerate() {
            while pending.front().is_some_and(|&(d, _)| d <= t) {
                let (d, a) = pending.pop_front().unwrap();
                x.complete().unwrap();
                sojourn.push(d - a);
            }
            match x.ingest(env(i as u64, t), VirtualTime::from_nanos(t)) {
                Ingest::Accepted { completes_at } => pending.push_back((completes_at.as_nanos(), t)),
                Ingest::Dropped(_) => drops += 1,
            }
            assert!(x.is_conserving());
        }
        for (d, a) in pending {
            x.complete().unwrap();
            sojourn.push(d - a);
        }
        (sojourn, drops)
    }

    /// Independent replay: departures D_i = max(A_i, D_prev) + 1/c held as
    /// exact fractions over denominator c (msg/s, integer), with the number
    /// in system counted by scanning earlier departures.
    fn oracle(capacity: u64, queue: usize, times: &[u64]) -> (Vec<u64>, u64) {
        let mut departures: Vec<u128> = Vec::new(); // numerators over `capacity`
        let mut sojourn = Vec::new();
        let mut drops = 0;
        let mut last: u128 = 0;
        for &a in times {
            let a_num = a as u128 * capacity as u128;
            let in_system = departures.iter().filter(|&&d| d.div_ceil(capacity as u128) > a as u128).count();
            if in_system >= queue {
                drops += 1;
                continue;
            }
            last = last.max(a_num) + NANOS_PER_SEC as u128;
            departures.push(last);
            sojourn.push(last.div_ceil(capacity as u128) as u64 - a);
        }
        (sojourn, drops)
    }

    fn arrivals(rate: u64, secs: u64) -> Vec<u64> {
        (0..rate * secs).map(|i| i * NANOS_PER_SEC / rate).collect()
    }

    #[test]
    fn light_load_sojourn_is_service_time() {
        let mut x = instance(600.0, 60);
        let (s, drops) = drive(&mut x, &arrivals(10, 5));
        assert_eq!(drops, 0);
        assert!(s.iter().all(|&v| v == 1_666_667));
    }

    #[test]
    fn exactly_at_capacity_never_drops() {
        let mut x = instance(600.0, 60);
        let times = arrivals(600, 20);
        let (s, drops) = drive(&mut x, &times);
        assert_eq!(drops, 0);
        assert_eq!((s, drops), oracle(600, 60, &times));
    }

    #[test]
    fn overload_saturates_at_full_queue_sojourn() {
        let mut x = instance(600.0, 60);
        let times = arrivals(1000, 20);
        let (s, drops) = drive(&mut x, &times);
        assert!(drops > 0);
        let tail = &s[s.len() / 2..];
        let mean = tail.iter().sum::<u64>() as f64 / tail.len() as f64;
        let service = 1e9 / 600.0;
        assert!((mean - 60.0 * service).abs() <= service, "{mean}");
        // delivered throughput converges to capacity
        let accepted = s.len() as f64 / 20.0;
        assert!((accepted - 600.0).abs() / 600.0 < 0.01, "{accepted}");
        assert_eq!((s, drops), oracle(600, 60, &times));
    }

    #[test]
    fn terminated_instance_emits_nothing() {
        let mut x = instance(600.0, 60);
        x.params.control = Some(ControlLoop {
            period_ms: 10.0,
            target: "gnb-1".into(),
        });
        assert!(x.control_message(1, VirtualTime::ZERO).is_some());
        x.set_state(XAppState::Terminated, VirtualTime::ZERO);
        assert!(x.control_message(2, VirtualTime::ZERO).is_none());
    }

    #[test]
    fn flush_counts_as_queue_drops() {
        let mut x = instance(1.0, 10);
        for i in 0..3 {
            x.ingest(env(i, 0), VirtualTime::ZERO);
        }
        assert_eq!(x.flush().len(), 3);
        assert!(x.is_conserving());
        assert_eq!(x.counters().dropped_by_queue, 3);
    }

    proptest! {
        #[test]
        fn matches_queue_oracle(capacity in 1u64..2000, queue in 1usize..80,
                                gaps in proptest::collection::vec(0u64..5_000_000, 1..600)) {
            let mut x = instance(capacity as f64, queue as u32);
            let times: Vec<u64> = gaps.iter().scan(0u64, |t, g| { *t += g; Some(*t) }).collect();
            prop_assert_eq!(drive(&mut x, &times), oracle(capacity, queue, &times));
        }

        #[test]
        fn no_drops_below_capacity(rate in 1u64..600, secs in 1u64..10) {
            let mut x = instance(600.0, 60);
            let (_, drops) = drive(&mut x, &arrivals(rate, secs));
            prop_assert_eq!(drops, 0);
        }
    }
}
