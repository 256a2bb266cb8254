//! Per-interval metrics keyed by (service, direction).
//!
//! Every delivery or drop lands in the interval containing its timestamp.
//! Series are dense from interval 0 up to the run horizon; queries and
//! exports zero-fill intervals nothing was recorded in.

mod export;
mod histogram;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use export::{csv_string, jsonl_string, trace_jsonl_string, write_csv, write_jsonl, write_trace, CSV_HEADER};
pub use histogram::{HistogramBounds, LatencyHistogram};

use crate::msgplane::{Hop, MessageEnvelope, MessageKind, ServiceIdentity};
use crate::sim::{VirtualTime, NANOS_PER_SEC};

pub const DEFAULT_INTERVAL_NS: u64 = NANOS_PER_SEC;
pub const TRACE_CAP: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Ingress,
    Egress,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ingress => "INGRESS",
            Direction::Egress => "EGRESS",
        }
    }

    /// Control messages are accounted to the sender's egress, everything
    /// else to the receiver's ingress.
    pub fn of(kind: MessageKind) -> Direction {
        if kind == MessageKind::E2Control {
            Direction::Egress
        } else {
            Direction::Ingress
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    Queue,
    Gate,
    Undeliverable,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeriesKey {
    pub service: ServiceIdentity,
    pub direction: Direction,
}

impl SeriesKey {
    pub fn new(service: ServiceIdentity, direction: Direction) -> Self {
        SeriesKey { service, direction }
    }

    /// The series a message is accounted to once its outcome is known.
    pub fn for_message(env: &MessageEnvelope) -> Self {
        let direction = Direction::of(env.kind);
        let service = match direction {
            Direction::Egress => env.source.clone(),
            Direction::Ingress => env
                .destination
                .clone()
                .unwrap_or_else(|| ServiceIdentity::unrouted(&env.dest_host)),
        };
        SeriesKey { service, direction }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyAggregate {
    pub count: u64,
    pub sum_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
    pub histogram: Option<LatencyHistogram>,
}

impl Default for LatencyAggregate {
    fn default() -> Self {
        LatencyAggregate {
            count: 0,
            sum_ns: 0,
            min_ns: u64::MAX,
            max_ns: 0,
            histogram: None,
        }
    }
}

impl LatencyAggregate {
    fn record(&mut self, bounds: &HistogramBounds, ns: u64) {
        self.count += 1;
        self.sum_ns += ns;
        self.min_ns = self.min_ns.min(ns);
        self.max_ns = self.max_ns.max(ns);
        self.histogram
            .get_or_insert_with(|| LatencyHistogram::new(bounds))
            .record(bounds, ns);
    }

    fn merge(&mut self, other: &LatencyAggregate) {
        if other.count == 0 {
            return;
        }
        self.count += other.count;
        self.sum_ns += other.sum_ns;
        self.min_ns = self.min_ns.min(other.min_ns);
        self.max_ns = self.max_ns.max(other.max_ns);
        match (&mut self.histogram, &other.histogram) {
            (Some(a), Some(b)) => a.merge(b),
            (None, Some(b)) => self.histogram = Some(b.clone()),
            _ => {}
        }
    }

    /// Exact mean, floor-rounded to whole nanoseconds.
    pub fn mean_ns(&self) -> u64 {
        self.sum_ns.checked_div(self.count).unwrap_or(0)
    }

    pub fn mean_ns_f64(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ns as f64 / self.count as f64
        }
    }

    pub fn min(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.min_ns
        }
    }

    pub fn quantile(&self, bounds: &HistogramBounds, q: f64) -> u64 {
        match &self.histogram {
            Some(h) if self.count > 0 => h.quantile(bounds, q, self.min_ns, self.max_ns),
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Interval {
    delivered: u64,
    dropped_queue: u64,
    dropped_gate: u64,
    undeliverable: u64,
    latency: LatencyAggregate,
}

impl Interval {
    fn merge(&mut self, o: &Interval) {
        self.delivered += o.delivered;
        self.dropped_queue += o.dropped_queue;
        self.dropped_gate += o.dropped_gate;
        self.undeliverable += o.undeliverable;
        self.latency.merge(&o.latency);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricSample {
    pub t_start: VirtualTime,
    pub t_end: VirtualTime,
    pub service: ServiceIdentity,
    pub direction: Direction,
    pub delivered: u64,
    pub dropped_by_queue: u64,
    pub dropped_by_gate: u64,
    pub undeliverable: u64,
    pub latency: LatencyAggregate,
}

impl MetricSample {
    pub fn duration_s(&self) -> f64 {
        self.t_end.saturating_sub(self.t_start) as f64 / NANOS_PER_SEC as f64
    }

    pub fn throughput(&self) -> f64 {
        let d = self.duration_s();
        if d == 0.0 {
            0.0
        } else {
            self.delivered as f64 / d
        }
    }

    /// Queue drops over processed-or-dropped; zero when nothing arrived.
    pub fn error_fraction(&self) -> f64 {
        error_fraction_of(self.delivered, self.dropped_by_queue)
    }

    pub fn settled(&self) -> u64 {
        self.delivered + self.dropped_by_queue + self.dropped_by_gate + self.undeliverable
    }
}

pub fn error_fraction_of(delivered: u64, dropped_queue: u64) -> f64 {
    let den = delivered + dropped_queue;
    if den == 0 {
        0.0
    } else {
        dropped_queue as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub msg_id: u64,
    pub kind: MessageKind,
    pub source: String,
    pub destination: Option<String>,
    pub created_at_ns: u64,
    pub delivered_at_ns: Option<u64>,
    pub outcome: &'static str,
    pub hops: Vec<Hop>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryConfig {
    #[serde(default = "default_interval_s")]
    pub interval_s: f64,
    #[serde(default)]
    pub trace: bool,
    /// Histogram boundaries in nanoseconds; defaults to 1 µs .. 10 s.
    #[serde(default)]
    pub histogram_bounds_ns: Option<Vec<u64>>,
}

fn default_interval_s() -> f64 {
    1.0
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            interval_s: default_interval_s(),
            trace: false,
            histogram_bounds_ns: None,
        }
    }
}

pub struct Telemetry {
    interval_ns: u64,
    bounds: HistogramBounds,
    series: BTreeMap<SeriesKey, Vec<Interval>>,
    horizon: VirtualTime,
    tracing: bool,
    traces: Vec<TraceRecord>,
    traces_dropped: u64,
    capture: BTreeSet<ServiceIdentity>,
    captured: BTreeMap<ServiceIdentity, Vec<(VirtualTime, u64)>>,
}

impl Telemetry {
    pub fn new(interval_ns: u64, bounds: HistogramBounds) -> Self {
        assert!(interval_ns > 0, "interval must be positive");
        Telemetry {
            interval_ns,
            bounds,
            series: BTreeMap::new(),
            horizon: VirtualTime::ZERO,
            tracing: false,
            traces: Vec::new(),
            traces_dropped: 0,
            capture: BTreeSet::new(),
            captured: BTreeMap::new(),
        }
    }

    pub fn interval_ns(&self) -> u64 {
        self.interval_ns
    }

    pub fn bounds(&self) -> &HistogramBounds {
        &self.bounds
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    /// Keeps raw per-message ingress latencies for `service`.
    pub fn capture_latencies(&mut self, service: ServiceIdentity) {
        self.capture.insert(service);
    }

    pub fn captured(&self, service: &ServiceIdentity) -> &[(VirtualTime, u64)] {
        self.captured.get(service).map_or(&[], Vec::as_slice)
    }

    fn slot(&mut self, key: SeriesKey, at: VirtualTime) -> &mut Interval {
        let idx = (at.as_nanos() / self.interval_ns) as usize;
        let v = self.series.entry(key).or_default();
        if v.len() <= idx {
            v.resize_with(idx + 1, Interval::default);
        }
        &mut v[idx]
    }

    /// Records a delivered message; `delivered_at` must be stamped.
    pub fn record_delivery(&mut self, env: &MessageEnvelope) {
        let at = env.delivered_at.expect("delivery without timestamp");
        let latency = at.saturating_sub(env.created_at);
        let key = SeriesKey::for_message(env);
        if key.direction == Direction::Ingress && self.capture.contains(&key.service) {
            self.captured
                .entry(key.service.clone())
                .or_default()
                .push((at, latency));
        }
        let bounds = self.bounds.clone();
        let slot = self.slot(key, at);
        slot.delivered += 1;
        slot.latency.record(&bounds, latency);
        self.trace(env, "delivered");
    }

    pub fn record_drop(&mut self, env: &MessageEnvelope, reason: DropReason, at: VirtualTime) {
        let slot = self.slot(SeriesKey::for_message(env), at);
        match reason {
            DropReason::Queue => slot.dropped_queue += 1,
            DropReason::Gate => slot.dropped_gate += 1,
            DropReason::Undeliverable => slot.undeliverable += 1,
        }
        let outcome = match reason {
            DropReason::Queue => "dropped_queue",
            DropReason::Gate => "dropped_gate",
            DropReason::Undeliverable => "undeliverable",
        };
        self.trace(env, outcome);
    }

    fn trace(&mut self, env: &MessageEnvelope, outcome: &'static str) {
        if !self.tracing {
            return;
        }
        if self.traces.len() >= TRACE_CAP {
            self.traces_dropped += 1;
            return;
        }
        self.traces.push(TraceRecord {
            msg_id: env.msg_id,
            kind: env.kind,
            source: env.source.to_string(),
            destination: env.destination.as_ref().map(ToString::to_string),
            created_at_ns: env.created_at.as_nanos(),
            delivered_at_ns: env.delivered_at.map(VirtualTime::as_nanos),
            outcome,
            hops: env.hops.clone(),
        });
    }

    pub fn traces(&self) -> &[TraceRecord] {
        &self.traces
    }

    pub fn traces_dropped(&self) -> u64 {
        self.traces_dropped
    }

    /// Marks the run end; exports cover `[0, horizon)` rounded up to whole
    /// intervals.
    pub fn close(&mut self, horizon: VirtualTime) {
        self.horizon = self.horizon.max(horizon);
    }

    pub fn horizon(&self) -> VirtualTime {
        self.horizon
    }

    /// Number of intervals covering the run.
    pub fn interval_count(&self) -> usize {
        let by_horizon = self.horizon.as_nanos().div_ceil(self.interval_ns) as usize;
        let by_data = self.series.values().map(Vec::len).max().unwrap_or(0);
        by_horizon.max(by_data)
    }

    pub fn series_keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.series.keys()
    }

    fn sample(&self, key: &SeriesKey, idx: usize, iv: Option<&Interval>) -> MetricSample {
        let empty = Interval::default();
        let iv = iv.unwrap_or(&empty);
        let start = idx as u64 * self.interval_ns;
        MetricSample {
            t_start: VirtualTime::from_nanos(start),
            t_end: VirtualTime::from_nanos(start + self.interval_ns),
            service: key.service.clone(),
            direction: key.direction,
            delivered: iv.delivered,
            dropped_by_queue: iv.dropped_queue,
            dropped_by_gate: iv.dropped_gate,
            undeliverable: iv.undeliverable,
            latency: iv.latency.clone(),
        }
    }

    fn index_range(&self, from: VirtualTime, to: VirtualTime) -> std::ops::Range<usize> {
        let lo = (from.as_nanos() / self.interval_ns) as usize;
        let hi = to.as_nanos().div_ceil(self.interval_ns) as usize;
        lo..hi.max(lo)
    }

    /// One sample per interval overlapping `[from, to)`, zero-filled.
    pub fn query(&self, service: &ServiceIdentity, direction: Direction, from: VirtualTime, to: VirtualTime) -> Vec<MetricSample> {
        let key = SeriesKey::new(service.clone(), direction);
        let data = self.series.get(&key);
        self.index_range(from, to)
            .map(|i| self.sample(&key, i, data.and_then(|d| d.get(i))))
            .collect()
    }

    /// Full series over the run horizon.
    pub fn series(&self, key: &SeriesKey) -> Vec<MetricSample> {
        let data = self.series.get(key);
        (0..self.interval_count())
            .map(|i| self.sample(key, i, data.and_then(|d| d.get(i))))
            .collect()
    }

    /// Sum of the intervals overlapping `[from, to)` as one sample.
    pub fn aggregate(&self, service: &ServiceIdentity, direction: Direction, from: VirtualTime, to: VirtualTime) -> MetricSample {
        let key = SeriesKey::new(service.clone(), direction);
        let range = self.index_range(from, to);
        let mut total = Interval::default();
        if let Some(d) = self.series.get(&key) {
            for iv in d.iter().take(range.end).skip(range.start) {
                total.merge(iv);
            }
        }
        MetricSample {
            t_start: VirtualTime::from_nanos(range.start as u64 * self.interval_ns),
            t_end: VirtualTime::from_nanos((range.end as u64).saturating_mul(self.interval_ns)),
            service: key.service,
            direction,
            delivered: total.delivered,
            dropped_by_queue: total.dropped_queue,
            dropped_by_gate: total.dropped_gate,
            undeliverable: total.undeliverable,
            latency: total.latency,
        }
    }

    /// Queue-drop fraction of `service` over `[from, to)` in both directions.
    pub fn error_fraction(&self, service: &ServiceIdentity, from: VirtualTime, to: VirtualTime) -> f64 {
        let (mut delivered, mut dropped) = (0, 0);
        for dir in [Direction::Ingress, Direction::Egress] {
            let s = self.aggregate(service, dir, from, to);
            delivered += s.delivered;
            dropped += s.dropped_by_queue;
        }
        error_fraction_of(delivered, dropped)
    }

    /// Grand totals over every series: (delivered, queue, gate, undeliverable).
    pub fn totals(&self) -> (u64, u64, u64, u64) {
        let mut t = (0, 0, 0, 0);
        for v in self.series.values() {
            for iv in v {
                t.0 += iv.delivered;
                t.1 += iv.dropped_queue;
                t.2 += iv.dropped_gate;
                t.3 += iv.undeliverable;
            }
        }
        t
    }
}

impl Default for Telemetry {
    fn default() -> Self {
        Telemetry::new(DEFAULT_INTERVAL_NS, HistogramBounds::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xapp() -> ServiceIdentity {
        ServiceIdentity::new("kpimon", "v1", "ricxapp")
    }

    fn delivered(created: u64, delivered: u64) -> MessageEnvelope {
        let mut env = MessageEnvelope::new(
            1,
            MessageKind::E2Indication,
            ServiceIdentity::new("gnb-1", "e2", "ran"),
            "kpimon",
            VirtualTime::from_nanos(created),
        );
        env.destination = Some(xapp());
        env.delivered_at = Some(VirtualTime::from_nanos(delivered));
        env
    }

    #[test]
    fn one_two_ms_delivery() {
        let mut t = Telemetry::default();
        t.record_delivery(&delivered(0, 2_000_000));
        let s = t.aggregate(&xapp(), Direction::Ingress, VirtualTime::ZERO, VirtualTime::from_secs(1));
        assert_eq!(s.delivered, 1);
        assert_eq!(s.latency.mean_ns(), 2_000_000);
    }

    #[test]
    fn open_ended_aggregate() {
        let mut t = Telemetry::default();
        t.record_delivery(&delivered(0, 3_500_000_000));
        let s = t.aggregate(&xapp(), Direction::Ingress, VirtualTime::from_secs(1), VirtualTime::MAX);
        assert_eq!(s.delivered, 1);
        assert_eq!(s.t_end, VirtualTime::MAX);
    }

    #[test]
    fn gate_drop_leaves_latency_alone() {
        let mut t = Telemetry::default();
        let mut env = MessageEnvelope::new(
            1,
            MessageKind::E2Control,
            ServiceIdentity::new("prbctl", "B", "ricxapp"),
            "gnb-1",
            VirtualTime::ZERO,
        );
        env.hops.clear();
        t.record_drop(&env, DropReason::Gate, VirtualTime::ZERO);
        let s = t.aggregate(&env.source, Direction::Egress, VirtualTime::ZERO, VirtualTime::from_secs(1));
        assert_eq!((s.dropped_by_gate, s.delivered, s.latency.count), (1, 0, 0));
    }

    #[test]
    fn six_hundred_per_second() {
        let mut t = Telemetry::default();
        for i in 0..600u64 {
            t.record_delivery(&delivered(i * 1_000_000, i * 1_000_000 + 1_666_667));
        }
        let s = &t.query(&xapp(), Direction::Ingress, VirtualTime::ZERO, VirtualTime::from_secs(1))[0];
        assert_eq!(s.throughput(), 600.0);
    }

    #[test]
    fn gaps_are_zero_filled() {
        let mut t = Telemetry::default();
        t.record_delivery(&delivered(0, 10));
        t.record_delivery(&delivered(0, 5_000_000_010));
        let q = t.query(&xapp(), Direction::Ingress, VirtualTime::ZERO, VirtualTime::from_secs(6));
        assert_eq!(q.len(), 6);
        assert_eq!(q.iter().map(|s| s.delivered).collect::<Vec<_>>(), vec![1, 0, 0, 0, 0, 1]);
        let unknown = ServiceIdentity::new("other", "v9", "x");
        assert!(t
            .query(&unknown, Direction::Egress, VirtualTime::ZERO, VirtualTime::from_secs(3))
            .iter()
            .all(|s| s.settled() == 0));
    }

    #[test]
    fn error_fraction_contract() {
        let mut t = Telemetry::default();
        assert_eq!(t.error_fraction(&xapp(), VirtualTime::ZERO, VirtualTime::from_secs(1)), 0.0);
        for _ in 0..95 {
            t.record_delivery(&delivered(0, 1));
        }
        for _ in 0..5 {
            t.record_drop(&delivered(0, 1), DropReason::Queue, VirtualTime::ZERO);
        }
        t.record_drop(&delivered(0, 1), DropReason::Undeliverable, VirtualTime::ZERO);
        let f = t.error_fraction(&xapp(), VirtualTime::ZERO, VirtualTime::from_secs(1));
        assert!((f - 0.05).abs() < 1e-12);
    }

    #[test]
    fn undeliverable_goes_to_placeholder_series() {
        let mut t = Telemetry::default();
        let env = MessageEnvelope::new(
            1,
            MessageKind::E2Indication,
            ServiceIdentity::new("gnb-1", "e2", "ran"),
            "kpimon",
            VirtualTime::ZERO,
        );
        t.record_drop(&env, DropReason::Undeliverable, VirtualTime::ZERO);
        let keys: Vec<_> = t.series_keys().cloned().collect();
        assert_eq!(keys, vec![SeriesKey::new(ServiceIdentity::unrouted("kpimon"), Direction::Ingress)]);
    }

    #[test]
    fn tracing_is_capped() {
        let mut t = Telemetry::default();
        t.set_tracing(true);
        for _ in 0..TRACE_CAP + 3 {
            t.record_delivery(&delivered(0, 1));
        }
        assert_eq!(t.traces().len(), TRACE_CAP);
        assert_eq!(t.traces_dropped(), 3);
    }

    proptest! {
        // counts add exactly and quantiles agree within one bucket
        #[test]
        fn interval_additivity(events in proptest::collection::vec((0u64..10_000_000_000, 1u64..200_000_000), 1..400)) {
            let mut fine = Telemetry::default();
            let mut coarse = Telemetry::new(10 * NANOS_PER_SEC, HistogramBounds::default());
            for &(at, lat) in &events {
                let env = delivered(at, at + lat);
                fine.record_delivery(&env);
                coarse.record_delivery(&env);
            }
            let end = VirtualTime::from_secs(20);
            let a = fine.aggregate(&xapp(), Direction::Ingress, VirtualTime::ZERO, end);
            let b = coarse.aggregate(&xapp(), Direction::Ingress, VirtualTime::ZERO, end);
            prop_assert_eq!(a.delivered, b.delivered);
            prop_assert_eq!(a.latency.sum_ns, b.latency.sum_ns);
            let bounds = fine.bounds().clone();
            for q in [0.5, 0.95, 0.99] {
                let (x, y) = (a.latency.quantile(&bounds, q), b.latency.quantile(&bounds, q));
                let (bx, by) = (bounds.bucket_of(x) as i64, bounds.bucket_of(y) as i64);
                prop_assert!((bx - by).abs() <= 1);
            }
        }
    }
}
