//! A/B test by temporal multiplexing: both versions receive ingress, only
//! one at a time may send control messages.

use serde::Serialize;

use crate::engine::{Flow, World, XAppId, XAppSpec};
use crate::error::Error;
use crate::lifecycle::plan::{AbPlan, WinnerMetric};
use crate::lifecycle::run::{PipelineRun, RunState};
use crate::lifecycle::Catalog;
use crate::mesh::{DestinationPolicy, RouteSplitPolicy, VersionPolicy};
use crate::sim::{secs_to_nanos, RandomStream, VirtualTime};
use crate::telemetry::{error_fraction_of, Direction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantStats {
    pub version: String,
    /// Egress-active windows as (from_ns, to_ns).
    pub active: Vec<(u64, u64)>,
    pub samples: usize,
    pub mean_latency_ns: f64,
    pub errors: u64,
    pub error_rate: f64,
    pub egress_throughput: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbVerdict {
    pub metric: WinnerMetric,
    pub a: VariantStats,
    pub b: VariantStats,
    /// Metric of A minus metric of B.
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub winner: Variant,
    /// `metric`, `errors` or `default`.
    pub decided_by: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbReport {
    pub state: RunState,
    pub overlap_ns: u64,
    pub gap_ns: Option<u64>,
    pub verdict: Option<AbVerdict>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbTimer {
    Switch,
    Evaluate,
    Settled,
}

type Windows = Vec<(VirtualTime, VirtualTime)>;

pub struct AbFlow {
    plan: AbPlan,
    run: PipelineRun,
    catalog: Catalog,
    a: Option<XAppId>,
    b: Option<XAppId>,
    verdict: Option<AbVerdict>,
    windows: Option<(Windows, Windows)>,
    done: bool,
}

/// Two-sided percentile bootstrap interval for mean(a) − mean(b).
pub fn bootstrap_mean_diff(a: &[f64], b: &[f64], resamples: u32, confidence: f64, rng: &mut RandomStream) -> (f64, f64) {
    if a.is_empty() || b.is_empty() {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|_| {
            let ma = (0..a.len()).map(|_| a[rng.index(a.len())]).sum::<f64>() / a.len() as f64;
            let mb = (0..b.len()).map(|_| b[rng.index(b.len())]).sum::<f64>() / b.len() as f64;
            ma - mb
        })
        .collect();
    diffs.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    let n = diffs.len();
    let lo = ((tail * n as f64).floor() as usize).min(n - 1);
    let hi = (((1.0 - tail) * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    (diffs[lo], diffs[hi])
}

fn overlap(a: &[(VirtualTime, VirtualTime)], b: &[(VirtualTime, VirtualTime)]) -> u64 {
    let mut total = 0;
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if hi > lo {
                total += hi.saturating_sub(lo);
            }
        }
    }
    total
}

fn in_windows(t: VirtualTime, w: &[(VirtualTime, VirtualTime)]) -> bool {
    w.iter().any(|&(a, b)| a <= t && t < b)
}

impl AbFlow {
    pub fn new(run_id: &str, plan: AbPlan, catalog: Catalog) -> Self {
        AbFlow {
            plan,
            run: PipelineRun::new(run_id, "ab"),
            catalog,
            a: None,
            b: None,
            verdict: None,
            windows: None,
            done: false,
        }
    }

    pub fn run(&self) -> &PipelineRun {
        &self.run
    }

    pub fn verdict(&self) -> Option<&AbVerdict> {
        self.verdict.as_ref()
    }

    pub fn report(&self) -> AbReport {
        let (overlap_ns, gap_ns) = match &self.windows {
            Some((wa, wb)) => {
                let gap = match (wa.last(), wb.first()) {
                    (Some(&(_, a_end)), Some(&(b_start, _))) if b_start >= a_end => Some(b_start.saturating_sub(a_end)),
                    _ => None,
                };
                (overlap(wa, wb), gap)
            }
            None => (0, None),
        };
        AbReport {
            state: self.run.state(),
            overlap_ns,
            gap_ns,
            verdict: self.verdict.clone(),
        }
    }

    fn stats(&self, world: &World<AbTimer>, id: XAppId, windows: &[(VirtualTime, VirtualTime)]) -> (VariantStats, Vec<f64>) {
        let x = world.xapp(id);
        let identity = x.identity().clone();
        let samples: Vec<f64> = world
            .telemetry
            .captured(&identity)
            .iter()
            .filter(|(t, _)| in_windows(*t, windows))
            .map(|&(_, l)| l as f64)
            .collect();
        let (mut delivered, mut errors, mut egress, mut active_ns) = (0, 0, 0, 0);
        for &(from, to) in windows {
            for dir in [Direction::Ingress, Direction::Egress] {
                let s = world.telemetry.aggregate(&identity, dir, from, to);
                delivered += s.delivered;
                errors += s.dropped_by_queue;
                if dir == Direction::Egress {
                    egress += s.delivered;
                }
            }
            active_ns += to.saturating_sub(from);
        }
        let mean = if samples.is_empty() {
            f64::INFINITY
        } else {
            samples.iter().sum::<f64>() / samples.len() as f64
        };
        let stats = VariantStats {
            version: identity.version.to_string(),
            active: windows.iter().map(|(a, b)| (a.as_nanos(), b.as_nanos())).collect(),
            samples: samples.len(),
            mean_latency_ns: mean,
            errors,
            error_rate: error_fraction_of(delivered, errors),
            egress_throughput: if active_ns == 0 { 0.0 } else { egress as f64 / (active_ns as f64 / 1e9) },
        };
        (stats, samples)
    }

    fn decide(&mut self, world: &World<AbTimer>) -> AbVerdict {
        let until = world.now();
        let (a, b) = (self.a.unwrap(), self.b.unwrap());
        let wa = world.egress_windows(a, until);
        let wb = world.egress_windows(b, until);
        let (sa, la) = self.stats(world, a, &wa);
        let (sb, lb) = self.stats(world, b, &wb);
        self.windows = Some((wa, wb));
        let metric = self.plan.winner_metric;
        // positive difference favours B for latency and errors, A for throughput
        let (difference, ci_low, ci_high) = match metric {
            WinnerMetric::MeanLatency => {
                let mut rng = RandomStream::new(world.seed(), "ab.bootstrap");
                let (lo, hi) = bootstrap_mean_diff(&la, &lb, self.plan.bootstrap_resamples, self.plan.confidence, &mut rng);
                (sa.mean_latency_ns - sb.mean_latency_ns, lo, hi)
            }
            WinnerMetric::ErrorRate => {
                let d = sa.error_rate - sb.error_rate;
                (d, d, d)
            }
            WinnerMetric::Throughput => {
                let d = sa.egress_throughput - sb.egress_throughput;
                (d, d, d)
            }
        };
        let significant = !(ci_low <= 0.0 && 0.0 <= ci_high);
        let (winner, decided_by) = if significant {
            let a_better = match metric {
                WinnerMetric::MeanLatency | WinnerMetric::ErrorRate => difference < 0.0,
                WinnerMetric::Throughput => difference > 0.0,
            };
            (if a_better { Variant::A } else { Variant::B }, "metric")
        } else if sa.errors != sb.errors {
            (if sa.errors < sb.errors { Variant::A } else { Variant::B }, "errors")
        } else {
            (Variant::A, "default")
        };
        AbVerdict {
            metric,
            a: sa,
            b: sb,
            difference,
            ci_low,
            ci_high,
            winner,
            decided_by,
        }
    }
}

fn find_or_deploy(world: &mut World<AbTimer>, catalog: &Catalog, host: &str, version: &str) -> Result<Option<XAppId>, Error> {
    if let Some(id) = world.find_version(host, version) {
        return Ok(Some(id));
    }
    match catalog.find(host, version) {
        Some(spec) => Ok(Some(world.deploy(XAppSpec::clone(spec))?)),
        None => Ok(None),
    }
}

impl Flow for AbFlow {
    type Timer = AbTimer;

    fn start(&mut self, world: &mut World<AbTimer>) -> Result<(), Error> {
        let now = world.now();
        let p = self.plan.clone();
        self.run.transition(
            RunState::Running,
            now,
            format!(
                "host={} a={} b={} duration_s={} switchover_s={} gap_s={}",
                p.host, p.version_a, p.version_b, p.duration_s, p.switchover_s, p.actuation_gap_s
            ),
        )?;
        self.a = find_or_deploy(world, &self.catalog, &p.host, &p.version_a)?;
        self.b = find_or_deploy(world, &self.catalog, &p.host, &p.version_b)?;
        let (Some(a), Some(b)) = (self.a, self.b) else {
            self.run.transition(RunState::Failed, now, "both versions need an xapp entry")?;
            self.done = true;
            return Ok(());
        };
        for id in [a, b] {
            let identity = world.xapp(id).identity().clone();
            world.telemetry.capture_latencies(identity.clone());
            self.run.note(now, "deploy", identity.to_string());
        }
        // initial policy is installed directly, so B never holds egress
        world.install_destination(&DestinationPolicy {
            host: p.host.clone(),
            versions: vec![
                VersionPolicy::open(&p.version_a),
                VersionPolicy {
                    egress_allowed: false,
                    ..VersionPolicy::open(&p.version_b)
                },
            ],
        });
        world.install_route(RouteSplitPolicy::new(
            p.host.as_str(),
            &[(&p.version_a, p.split_a), (&p.version_b, 100 - p.split_a)],
        ))?;
        self.run.note(
            now,
            "gate",
            format!("{}=open {}=closed split={}/{}", p.version_a, p.version_b, p.split_a, 100 - p.split_a),
        );
        // issue the flip early enough that it lands exactly on the switchover
        let push = world.mesh.push_delay_ns();
        let switch_at = secs_to_nanos(p.switchover_s).saturating_sub(push).max(now.as_nanos());
        world.schedule_flow(VirtualTime::from_nanos(switch_at), AbTimer::Switch)?;
        world.schedule_flow(VirtualTime::from_secs_f64(p.duration_s), AbTimer::Evaluate)?;
        Ok(())
    }

    fn on_timer(&mut self, world: &mut World<AbTimer>, timer: AbTimer) -> Result<(), Error> {
        let now = world.now();
        let p = self.plan.clone();
        match timer {
            AbTimer::Switch => {
                let gap = secs_to_nanos(p.actuation_gap_s);
                let (closed, opened) = world.flip_egress(&p.host, &p.version_a, &p.version_b, gap)?;
                self.run.note(
                    now,
                    "switchover",
                    format!(
                        "{} closed at_ns={} {} opens at_ns={}",
                        p.version_a,
                        closed.as_nanos(),
                        p.version_b,
                        opened.as_nanos()
                    ),
                );
            }
            AbTimer::Evaluate => {
                let v = self.decide(world);
                self.run.note(
                    now,
                    "verdict",
                    format!(
                        "metric={:?} difference={:.3} ci=[{:.3},{:.3}] winner={:?} by={}",
                        v.metric, v.difference, v.ci_low, v.ci_high, v.winner, v.decided_by
                    ),
                );
                let (win_v, lose_id) = match v.winner {
                    Variant::A => (p.version_a.clone(), self.b.unwrap()),
                    Variant::B => (p.version_b.clone(), self.a.unwrap()),
                };
                self.verdict = Some(v);
                world.undeploy(lose_id)?;
                let at = world.apply_route_split(RouteSplitPolicy::new(p.host.as_str(), &[(&win_v, 100)]))?;
                if !world.mesh.egress_allowed(&p.host, &win_v) {
                    world.gate_egress(&p.host, &win_v, true)?;
                }
                self.run.note(now, "promote", format!("{win_v}=100 effective_at_ns={}", at.as_nanos()));
                world.schedule_flow(at, AbTimer::Settled)?;
            }
            AbTimer::Settled => {
                self.run.transition(RunState::Succeeded, now, "winner holds 100%")?;
                self.done = true;
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bootstrap_separates_distinct_means() {
        let a: Vec<f64> = (0..500).map(|i| 10.0 + (i % 7) as f64).collect();
        let b: Vec<f64> = (0..500).map(|i| 20.0 + (i % 5) as f64).collect();
        let mut rng = RandomStream::new(1, "t");
        let (lo, hi) = bootstrap_mean_diff(&a, &b, 1000, 0.95, &mut rng);
        // exact difference of the sample means
        let d = a.iter().sum::<f64>() / 500.0 - b.iter().sum::<f64>() / 500.0;
        assert!(lo <= d && d <= hi, "{lo} {d} {hi}");
        assert!(hi < 0.0);
    }

    #[test]
    fn bootstrap_of_identical_samples_contains_zero() {
        let a: Vec<f64> = (0..300).map(|i| (i % 11) as f64).collect();
        let mut rng = RandomStream::new(2, "t");
        let (lo, hi) = bootstrap_mean_diff(&a, &a, 1000, 0.95, &mut rng);
        assert!(lo <= 0.0 && 0.0 <= hi);
    }

    #[test]
    fn overlap_measure() {
        let t = VirtualTime::from_secs;
        assert_eq!(overlap(&[(t(0), t(10))], &[(t(10), t(20))]), 0);
        assert_eq!(overlap(&[(t(0), t(10))], &[(t(5), t(20))]), 5_000_000_000);
    }
}
