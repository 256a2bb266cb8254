//! Indication-rate schedules.
//!
//! A profile is a list of constant-rate segments. Inside a segment starting
//! at `s` with rate `r` the i-th arrival is at `s + floor(i / r)` in integer
//! nanoseconds, computed from the rate in milli-messages per second so that
//! no gap accumulates rounding error.

use serde::{Deserialize, Serialize};

use crate::sim::{secs_to_nanos, VirtualTime, NANOS_PER_SEC};

const NANO_MILLI: u128 = NANOS_PER_SEC as u128 * 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficProfile {
    Constant {
        rate: f64,
    },
    Burst {
        base: f64,
        burst: f64,
        pre_s: f64,
        burst_s: f64,
        post_s: f64,
    },
    /// Rate `start` during the first second, `start + step` during the
    /// second, and so on up to and including `end`.
    Incremental {
        start: f64,
        end: f64,
        step: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start_ns: u64,
    /// Exclusive; `u64::MAX` for an open-ended segment.
    pub end_ns: u64,
    pub rate_milli: u64,
}

impl Segment {
    pub fn arrival(&self, i: u64) -> Option<u64> {
        let off = i as u128 * NANO_MILLI / self.rate_milli as u128;
        let t = self.start_ns as u128 + off;
        (t < self.end_ns as u128).then_some(t as u64)
    }

    /// Arrivals in `[start, min(end, limit))`.
    pub fn count_before(&self, limit_ns: u64) -> u64 {
        let end = self.end_ns.min(limit_ns);
        if end <= self.start_ns {
            return 0;
        }
        let d = (end - self.start_ns) as u128;
        (d * self.rate_milli as u128).div_ceil(NANO_MILLI) as u64
    }
}

fn milli(rate: f64) -> u64 {
    (rate * 1000.0).round() as u64
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), String> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 && milli(v) > 0 {
                Ok(())
            } else {
                Err(format!("{name} must be positive, got {v}"))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(format!("{name} must be non-negative, got {v}"))
            }
        };
        match *self {
            TrafficProfile::Constant { rate } => positive("rate", rate),
            TrafficProfile::Burst {
                base,
                burst,
                pre_s,
                burst_s,
                post_s,
            } => {
                positive("base", base)?;
                positive("burst", burst)?;
                non_negative("pre_s", pre_s)?;
                positive("burst_s", burst_s)?;
                non_negative("post_s", post_s)
            }
            TrafficProfile::Incremental { start, end, step } => {
                positive("start", start)?;
                positive("end", end)?;
                positive("step", step)?;
                if end < start {
                    return Err(format!("end {end} is below start {start}"));
                }
                Ok(())
            }
        }
    }

    pub fn segments(&self) -> Vec<Segment> {
        match *self {
            TrafficProfile::Constant { rate } => vec![Segment {
                start_ns: 0,
                end_ns: u64::MAX,
                rate_milli: milli(rate),
            }],
            TrafficProfile::Burst {
                base,
                burst,
                pre_s,
                burst_s,
                post_s,
            } => {
                let a = secs_to_nanos(pre_s);
                let b = a + secs_to_nanos(burst_s);
                let c = b + secs_to_nanos(post_s);
                [(0, a, base), (a, b, burst), (b, c, base)]
                    .into_iter()
                    .filter(|&(s, e, _)| e > s)
                    .map(|(start_ns, end_ns, r)| Segment {
                        start_ns,
                        end_ns,
                        rate_milli: milli(r),
                    })
                    .collect()
            }
            TrafficProfile::Incremental { start, end, step } => {
                let (s, e, st) = (milli(start), milli(end), milli(step));
                let n = (e - s) / st + 1;
                (0..n)
                    .map(|j| Segment {
                        start_ns: j * NANOS_PER_SEC,
                        end_ns: (j + 1) * NANOS_PER_SEC,
                        rate_milli: s + j * st,
                    })
                    .collect()
            }
        }
    }

    /// Profile length, `None` for open-ended profiles.
    pub fn duration_ns(&self) -> Option<u64> {
        match self {
            TrafficProfile::Constant { .. } => None,
            _ => self.segments().last().map(|s| s.end_ns),
        }
    }

    /// Rate in effect at `t` since profile start (msg/s).
    pub fn rate_at(&self, t_ns: u64) -> f64 {
        self.segments()
            .iter()
            .find(|s| s.start_ns <= t_ns && t_ns < s.end_ns)
            .map_or(0.0, |s| s.rate_milli as f64 / 1000.0)
    }

    /// Number of arrivals within `horizon_ns` of profile start.
    pub fn count(&self, horizon_ns: u64) -> u64 {
        self.segments().iter().map(|s| s.count_before(horizon_ns)).sum()
    }

    /// Lazily generated arrival instants, shifted by `offset`.
    pub fn schedule(&self, offset: VirtualTime, horizon_ns: u64) -> ArrivalSchedule {
        ArrivalSchedule {
            segments: self.segments(),
            seg: 0,
            i: 0,
            offset_ns: offset.as_nanos(),
            horizon_ns,
        }
    }
}

/// Iterator over absolute arrival times.
#[derive(Clone, Debug)]
pub struct ArrivalSchedule {
    segments: Vec<Segment>,
    seg: usize,
    i: u64,
    offset_ns: u64,
    horizon_ns: u64,
}

impl Iterator for ArrivalSchedule {
    type Item = VirtualTime;

    fn next(&mut self) -> Option<VirtualTime> {
        while let Some(seg) = self.segments.get(self.seg) {
            match seg.arrival(self.i) {
                Some(t) if t < self.horizon_ns => {
                    self.i += 1;
                    return Some(VirtualTime::from_nanos(self.offset_ns.saturating_add(t)));
                }
                Some(_) => return None,
                None => {
                    self.seg += 1;
                    self.i = 0;
                }
            }
        }
        None
    }
}
