//! Fixed log-spaced latency histogram.
//!
//! Bucket boundaries are shared by every histogram of a run, so a
//! histogram is just a count vector. With `b` boundaries there are `b + 1`
//! buckets: an underflow bucket below `b[0]`, one bucket per `[b[i], b[i+1])`
//! and an overflow bucket at or above the last boundary.

use std::sync::Arc;

/// Ten steps per decade, each ≈ 10^(1/10) apart.
const MANTISSAS: [u64; 10] = [100, 126, 158, 200, 251, 316, 398, 501, 631, 794];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistogramBounds(Arc<[u64]>);

impl Default for HistogramBounds {
    /// 1 µs to 10 s.
    fn default() -> Self {
        let mut b = Vec::with_capacity(71);
        let mut scale = 10u64;
        for _ in 0..7 {
            b.extend(MANTISSAS.iter().map(|m| m * scale));
            scale *= 10;
        }
        b.push(10_000_000_000);
        HistogramBounds(b.into())
    }
}

impl HistogramBounds {
    /// Custom boundaries; must be non-empty and strictly increasing.
    pub fn new(bounds: Vec<u64>) -> Result<Self, String> {
        if bounds.is_empty() {
            return Err("histogram needs at least one boundary".into());
        }
        if bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err("histogram boundaries must be strictly increasing".into());
        }
        Ok(HistogramBounds(bounds.into()))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn bucket_count(&self) -> usize {
        self.0.len() + 1
    }

    pub fn bucket_of(&self, value: u64) -> usize {
        self.0.partition_point(|&b| b <= value)
    }

    /// Upper edge of a bucket; `None` for the overflow bucket.
    pub fn upper_edge(&self, bucket: usize) -> Option<u64> {
        self.0.get(bucket).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatencyHistogram {
    counts: Box<[u32]>,
}

impl LatencyHistogram {
    pub fn new(bounds: &HistogramBounds) -> Self {
        LatencyHistogram {
            counts: vec![0; bounds.bucket_count()].into_boxed_slice(),
        }
    }

    pub fn record(&mut self, bounds: &HistogramBounds, value: u64) {
        self.counts[bounds.bucket_of(value)] += 1;
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Upper edge of the bucket holding the `ceil(q·n)`-th smallest sample,
    /// clamped to the observed `[min, max]`.
    pub fn quantile(&self, bounds: &HistogramBounds, q: f64, min: u64, max: u64) -> u64 {
        let n = self.total();
        if n == 0 {
            return 0;
        }
        let rank = ((q.clamp(0.0, 1.0) * n as f64).ceil() as u64).max(1);
        let mut seen = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            seen += c as u64;
            if seen >= rank {
                return bounds.upper_edge(i).unwrap_or(max).clamp(min, max);
            }
        }
        max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_bounds_span_microsecond_to_ten_seconds() {
        let b = HistogramBounds::default();
        assert_eq!(b.as_slice().first(), Some(&1_000));
        assert_eq!(b.as_slice().last(), Some(&10_000_000_000));
        assert_eq!(b.bucket_count(), 72);
        assert_eq!(b.bucket_of(999), 0);
        assert_eq!(b.bucket_of(1_000), 1);
        assert_eq!(b.bucket_of(20_000_000_000), 71);
    }

    #[test]
    fn bad_bounds_are_rejected() {
        assert!(HistogramBounds::new(vec![]).is_err());
        assert!(HistogramBounds::new(vec![5, 5]).is_err());
        assert!(HistogramBounds::new(vec![1, 10, 100]).is_ok());
    }

    #[test]
    fn single_value_quantiles_collapse_to_it() {
        let b = HistogramBounds::default();
        let mut h = LatencyHistogram::new(&b);
        h.record(&b, 2_000_000);
        for q in [0.5, 0.95, 0.99] {
            assert_eq!(h.quantile(&b, q, 2_000_000, 2_000_000), 2_000_000);
        }
    }

    #[test]
    fn quantile_is_within_one_bucket_of_truth() {
        let b = HistogramBounds::default();
        let mut h = LatencyHistogram::new(&b);
        let values: Vec<u64> = (1..=1000).map(|i| i * 10_000).collect();
        for &v in &values {
            h.record(&b, v);
        }
        let p50 = h.quantile(&b, 0.5, 10_000, 10_000_000);
        // true median 5 ms; its bucket is [5.01 ms, 6.31 ms) or the one below
        assert!((5_000_000..=6_310_000).contains(&p50), "{p50}");
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(values in proptest::collection::vec(1u64..20_000_000_000, 1..300)) {
            let b = HistogramBounds::default();
            let mut h = LatencyHistogram::new(&b);
            for &v in &values {
                h.record(&b, v);
            }
            let (min, max) = (*values.iter().min().unwrap(), *values.iter().max().unwrap());
            let p50 = h.quantile(&b, 0.5, min, max);
            let p95 = h.quantile(&b, 0.95, min, max);
            let p99 = h.quantile(&b, 0.99, min, max);
            prop_assert!(min <= p50 && p50 <= p95 && p95 <= p99 && p99 <= max);
            prop_assert_eq!(h.total(), values.len() as u64);
        }

        #[test]
        fn merge_equals_recording_the_union(a in proptest::collection::vec(0u64..1u64 << 34, 0..100),
                                            c in proptest::collection::vec(0u64..1u64 << 34, 0..100)) {
            let b = HistogramBounds::default();
            let mut ha = LatencyHistogram::new(&b);
            let mut hc = LatencyHistogram::new(&b);
            let mut hu = LatencyHistogram::new(&b);
            for &v in &a { ha.record(&b, v); hu.record(&b, v); }
            for &v in &c { hc.record(&b, v); hu.record(&b, v); }
            ha.merge(&hc);
            prop_assert_eq!(ha, hu);
        }
    }
}
