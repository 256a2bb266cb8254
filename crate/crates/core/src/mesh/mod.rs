//! Service-mesh analog: route splits, per-subset destination policy (egress
//! gating and outlier ejection), mesh latency modes and delayed config push.
//!
//! The mesh never touches the scheduler. Policy changes are staged with
//! [`Mesh::apply_route_split`] / [`Mesh::gate_egress`], which return the
//! effective time and a [`PendingId`]; the owner schedules an event for that
//! time and calls [`Mesh::commit`] when it fires. Every message therefore
//! sees exactly one committed policy.

mod mode;
mod routing;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use mode::{traverse, Calibration, MeshKind, MeshMode, DEFAULT_JITTER_FRACTION};
pub use routing::{weighted_draw, RouteSplitPolicy, RouterKind, SmoothWeightedRouter, Split};

use crate::error::MeshError;
use crate::sim::{RandomStream, VirtualTime, NANOS_PER_MS, NANOS_PER_SEC};

pub const DEFAULT_PUSH_DELAY_NS: u64 = 500 * NANOS_PER_MS;
pub const DEFAULT_OUTLIER_THRESHOLD: u32 = 5;
pub const DEFAULT_EJECTION_NS: u64 = 30 * NANOS_PER_SEC;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    pub push_delay_ns: u64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        PropagationConfig {
            push_delay_ns: DEFAULT_PUSH_DELAY_NS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VersionPolicy {
    pub version: String,
    #[serde(default = "default_true")]
    pub egress_allowed: bool,
    #[serde(default)]
    pub ejected: bool,
    #[serde(default = "default_outlier_threshold")]
    pub outlier_threshold: u32,
}

fn default_true() -> bool {
    true
}

fn default_outlier_threshold() -> u32 {
    DEFAULT_OUTLIER_THRESHOLD
}

impl VersionPolicy {
    pub fn open(version: &str) -> Self {
        VersionPolicy {
            version: version.to_string(),
            egress_allowed: true,
            ejected: false,
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DestinationPolicy {
    pub host: String,
    pub versions: Vec<VersionPolicy>,
}

#[derive(Clone, Debug)]
struct SubsetState {
    egress_allowed: bool,
    ejected: bool,
    outlier_threshold: u32,
    consecutive_errors: u32,
}

impl SubsetState {
    fn from_policy(p: &VersionPolicy) -> Self {
        SubsetState {
            egress_allowed: p.egress_allowed,
            ejected: p.ejected,
            outlier_threshold: p.outlier_threshold,
            consecutive_errors: 0,
        }
    }
}

impl Default for SubsetState {
    fn default() -> Self {
        SubsetState::from_policy(&VersionPolicy::open(""))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PendingId(u64);

#[derive(Clone, Debug)]
enum PendingChange {
    Route(RouteSplitPolicy),
    Gate {
        host: String,
        version: String,
        allow: bool,
    },
}

/// A committed route split with its apply and effective instants.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RouteTransition {
    pub applied_at: VirtualTime,
    pub effective_at: VirtualTime,
    pub policy: RouteSplitPolicy,
}

/// A committed egress gate change.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GateTransition {
    pub applied_at: VirtualTime,
    pub effective_at: VirtualTime,
    pub host: String,
    pub version: String,
    pub allow: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EjectionState {
    Healthy { consecutive_errors: u32 },
    /// Crossed the threshold on this report.
    Ejected,
    AlreadyEjected,
}

/// Why a message found no destination subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouteMiss {
    /// Nobody subscribed, or the policy only names unsubscribed versions.
    NoSubscriber,
    Mesh(MeshError),
}

pub struct Mesh {
    mode: MeshMode,
    propagation: PropagationConfig,
    router_kind: RouterKind,
    ejection_ns: u64,
    routes: BTreeMap<String, RouteSplitPolicy>,
    subsets: BTreeMap<(String, String), SubsetState>,
    routers: BTreeMap<String, SmoothWeightedRouter>,
    pending: BTreeMap<PendingId, (VirtualTime, PendingChange)>,
    next_pending: u64,
    route_log: Vec<RouteTransition>,
    gate_log: Vec<GateTransition>,
    rng: RandomStream,
}

impl Mesh {
    pub fn new(mode: MeshMode, propagation: PropagationConfig, rng: RandomStream) -> Self {
        Mesh {
            mode,
            propagation,
            router_kind: RouterKind::Swrr,
            ejection_ns: DEFAULT_EJECTION_NS,
            routes: BTreeMap::new(),
            subsets: BTreeMap::new(),
            routers: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_pending: 0,
            route_log: Vec::new(),
            gate_log: Vec::new(),
            rng,
        }
    }

    pub fn with_router(mut self, kind: RouterKind) -> Self {
        self.router_kind = kind;
        self
    }

    pub fn with_ejection_ns(mut self, ns: u64) -> Self {
        self.ejection_ns = ns;
        self
    }

    pub fn mode(&self) -> &MeshMode {
        &self.mode
    }

    pub fn push_delay_ns(&self) -> u64 {
        self.propagation.push_delay_ns
    }

    pub fn ejection_ns(&self) -> u64 {
        self.ejection_ns
    }

    /// Installs initial data-plane state with no propagation delay.
    pub fn install_route(&mut self, policy: RouteSplitPolicy, now: VirtualTime) -> Result<(), MeshError> {
        policy.validate()?;
        self.route_log.push(RouteTransition {
            applied_at: now,
            effective_at: now,
            policy: policy.clone(),
        });
        self.routes.insert(policy.host.clone(), policy);
        Ok(())
    }

    pub fn install_destination(&mut self, policy: &DestinationPolicy, now: VirtualTime) {
        for v in &policy.versions {
            self.subsets
                .insert((policy.host.clone(), v.version.clone()), SubsetState::from_policy(v));
            self.gate_log.push(GateTransition {
                applied_at: now,
                effective_at: now,
                host: policy.host.clone(),
                version: v.version.clone(),
                allow: v.egress_allowed,
            });
        }
    }

    /// Stages a route split. `known` reports whether a version is
    /// registered under the host.
    pub fn apply_route_split(
        &mut self,
        policy: RouteSplitPolicy,
        now: VirtualTime,
        known: impl Fn(&str, &str) -> bool,
    ) -> Result<(VirtualTime, PendingId), MeshError> {
        policy.validate()?;
        if let Some(v) = policy.versions().find(|v| !known(&policy.host, v)) {
            return Err(MeshError::UnknownVersion {
                host: policy.host.clone(),
                version: v.to_string(),
            });
        }
        Ok(self.stage(now, PendingChange::Route(policy)))
    }

    pub fn gate_egress(
        &mut self,
        host: &str,
        version: &str,
        allow: bool,
        now: VirtualTime,
        known: impl Fn(&str, &str) -> bool,
    ) -> Result<(VirtualTime, PendingId), MeshError> {
        if !known(host, version) && !self.subsets.contains_key(&(host.to_string(), version.to_string())) {
            return Err(MeshError::UnknownVersion {
                host: host.to_string(),
                version: version.to_string(),
            });
        }
        Ok(self.stage(
            now,
            PendingChange::Gate {
                host: host.to_string(),
                version: version.to_string(),
                allow,
            },
        ))
    }

    fn stage(&mut self, now: VirtualTime, change: PendingChange) -> (VirtualTime, PendingId) {
        let id = PendingId(self.next_pending);
        self.next_pending += 1;
        self.pending.insert(id, (now, change));
        (now.saturating_add(self.propagation.push_delay_ns), id)
    }

    /// Makes a staged change effective.
    pub fn commit(&mut self, id: PendingId, now: VirtualTime) {
        let Some((applied_at, change)) = self.pending.remove(&id) else {
            return;
        };
        match change {
            PendingChange::Route(policy) => {
                self.route_log.push(RouteTransition {
                    applied_at,
                    effective_at: now,
                    policy: policy.clone(),
                });
                self.routes.insert(policy.host.clone(), policy);
            }
            PendingChange::Gate { host, version, allow } => {
                self.subsets
                    .entry((host.clone(), version.clone()))
                    .or_default()
                    .egress_allowed = allow;
                self.gate_log.push(GateTransition {
                    applied_at,
                    effective_at: now,
                    host,
                    version,
                    allow,
                });
            }
        }
    }

    pub fn pending_changes(&self) -> usize {
        self.pending.len()
    }

    pub fn effective_route(&self, host: &str) -> Option<&RouteSplitPolicy> {
        self.routes.get(host)
    }

    pub fn egress_allowed(&self, host: &str, version: &str) -> bool {
        self.subset(host, version).is_none_or(|s| s.egress_allowed)
    }

    pub fn is_ejected(&self, host: &str, version: &str) -> bool {
        self.subset(host, version).is_some_and(|s| s.ejected)
    }

    fn subset(&self, host: &str, version: &str) -> Option<&SubsetState> {
        self.subsets.get(&(host.to_string(), version.to_string()))
    }

    pub fn route_log(&self) -> &[RouteTransition] {
        &self.route_log
    }

    pub fn gate_log(&self) -> &[GateTransition] {
        &self.gate_log
    }

    /// Feeds one processing outcome into outlier detection.
    pub fn report_outlier(&mut self, host: &str, version: &str, error: bool) -> EjectionState {
        let s = self
            .subsets
            .entry((host.to_string(), version.to_string()))
            .or_default();
        if s.ejected {
            return EjectionState::AlreadyEjected;
        }
        if !error {
            s.consecutive_errors = 0;
            return EjectionState::Healthy { consecutive_errors: 0 };
        }
        s.consecutive_errors += 1;
        if s.outlier_threshold > 0 && s.consecutive_errors >= s.outlier_threshold {
            s.ejected = true;
            s.consecutive_errors = 0;
            EjectionState::Ejected
        } else {
            EjectionState::Healthy {
                consecutive_errors: s.consecutive_errors,
            }
        }
    }

    pub fn uneject(&mut self, host: &str, version: &str) {
        if let Some(s) = self.subsets.get_mut(&(host.to_string(), version.to_string())) {
            s.ejected = false;
            s.consecutive_errors = 0;
        }
    }

    /// Chooses the destination version for a message to `host` among the
    /// `subscribed` versions (sorted, deduplicated).
    ///
    /// Without a route policy every subscribed version gets equal weight,
    /// which degenerates to "single subset, weight 100" for one subscriber.
    pub fn select_version(&mut self, host: &str, subscribed: &[Arc<str>]) -> Result<Arc<str>, RouteMiss> {
        if subscribed.is_empty() {
            return Err(RouteMiss::NoSubscriber);
        }
        let mut any_subscribed = false;
        let mut candidates: Vec<(Arc<str>, u32)> = Vec::with_capacity(subscribed.len());
        match self.routes.get(host) {
            Some(policy) => {
                for split in &policy.splits {
                    if split.weight == 0 {
                        continue;
                    }
                    let Some(v) = subscribed.iter().find(|v| ***v == *split.version) else {
                        continue;
                    };
                    any_subscribed = true;
                    if !self.is_ejected(host, v) {
                        candidates.push((v.clone(), split.weight));
                    }
                }
            }
            None => {
                any_subscribed = true;
                for v in subscribed {
                    if !self.is_ejected(host, v) {
                        candidates.push((v.clone(), 1));
                    }
                }
            }
        }
        if candidates.is_empty() {
            return Err(if any_subscribed {
                RouteMiss::Mesh(MeshError::NoEligibleVersion(host.to_string()))
            } else {
                RouteMiss::NoSubscriber
            });
        }
        if candidates.len() == 1 {
            // keeps the router's period intact for the host
            let router = self.routers.entry(host.to_string()).or_default();
            router.pick(&candidates);
            return Ok(candidates[0].0.clone());
        }
        let idx = match self.router_kind {
            RouterKind::Swrr => self
                .routers
                .entry(host.to_string())
                .or_default()
                .pick(&candidates),
            RouterKind::Random => weighted_draw(&candidates, &mut self.rng),
        };
        Ok(candidates[idx.expect("non-empty candidates")].0.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh() -> Mesh {
        Mesh::new(
            Calibration::Burst.mode(MeshKind::Sidecar, 0.1),
            PropagationConfig::default(),
            RandomStream::new(1, "mesh"),
        )
    }

    fn versions(v: &[&str]) -> Vec<Arc<str>> {
        v.iter().map(|s| Arc::from(*s)).collect()
    }

    #[test]
    fn staged_split_becomes_effective_after_push_delay() {
        let mut m = mesh();
        let now = VirtualTime::from_secs(360);
        let (at, id) = m
            .apply_route_split(RouteSplitPolicy::new("kpimon", &[("v1", 95), ("v2", 5)]), now, |_, _| true)
            .unwrap();
        assert_eq!(at, VirtualTime::from_millis(360_500));
        assert!(m.effective_route("kpimon").is_none());
        m.commit(id, at);
        assert_eq!(m.effective_route("kpimon").unwrap().weight_of("v2"), 5);
        assert_eq!(m.route_log()[0].applied_at, now);
        assert_eq!(m.route_log()[0].effective_at, at);
    }

    #[test]
    fn invalid_and_unknown_splits_are_rejected() {
        let mut m = mesh();
        let bad = RouteSplitPolicy::new("kpimon", &[("v1", 50), ("v2", 49)]);
        assert!(matches!(
            m.apply_route_split(bad, VirtualTime::ZERO, |_, _| true),
            Err(MeshError::InvalidWeights { .. })
        ));
        let unknown = RouteSplitPolicy::new("kpimon", &[("v1", 50), ("v3", 50)]);
        assert!(matches!(
            m.apply_route_split(unknown, VirtualTime::ZERO, |_, v| v != "v3"),
            Err(MeshError::UnknownVersion { .. })
        ));
    }

    #[test]
    fn full_weight_to_stable() {
        let mut m = mesh();
        m.install_route(RouteSplitPolicy::new("kpimon", &[("v1", 100), ("v2", 0)]), VirtualTime::ZERO)
            .unwrap();
        let subs = versions(&["v1", "v2"]);
        for _ in 0..200 {
            assert_eq!(&*m.select_version("kpimon", &subs).unwrap(), "v1");
        }
    }

    #[test]
    fn gate_change_is_delayed_and_logged() {
        let mut m = mesh();
        assert!(m.egress_allowed("prbctl", "B"));
        let (at, id) = m
            .gate_egress("prbctl", "B", false, VirtualTime::ZERO, |_, _| true)
            .unwrap();
        assert!(m.egress_allowed("prbctl", "B"));
        m.commit(id, at);
        assert!(!m.egress_allowed("prbctl", "B"));
        assert_eq!(m.gate_log().len(), 1);
        assert!(matches!(
            m.gate_egress("prbctl", "C", true, VirtualTime::ZERO, |_, _| false),
            Err(MeshError::UnknownVersion { .. })
        ));
    }

    #[test]
    fn five_consecutive_errors_eject() {
        let mut m = mesh();
        for _ in 0..4 {
            assert!(matches!(m.report_outlier("h", "v2", true), EjectionState::Healthy { .. }));
        }
        assert_eq!(m.report_outlier("h", "v2", true), EjectionState::Ejected);
        assert!(m.is_ejected("h", "v2"));
        assert_eq!(m.report_outlier("h", "v2", false), EjectionState::AlreadyEjected);
    }

    #[test]
    fn success_resets_the_error_run() {
        let mut m = mesh();
        for _ in 0..4 {
            m.report_outlier("h", "v2", true);
        }
        m.report_outlier("h", "v2", false);
        for _ in 0..4 {
            m.report_outlier("h", "v2", true);
        }
        assert!(!m.is_ejected("h", "v2"));
    }

    #[test]
    fn ejected_version_is_skipped_by_selection() {
        let mut m = mesh();
        m.install_route(RouteSplitPolicy::new("h", &[("v1", 50), ("v2", 50)]), VirtualTime::ZERO)
            .unwrap();
        for _ in 0..5 {
            m.report_outlier("h", "v2", true);
        }
        let subs = versions(&["v1", "v2"]);
        for _ in 0..100 {
            assert_eq!(&*m.select_version("h", &subs).unwrap(), "v1");
        }
        m.report_outlier("h", "v1", true);
        for _ in 0..5 {
            m.report_outlier("h", "v1", true);
        }
        assert_eq!(
            m.select_version("h", &subs),
            Err(RouteMiss::Mesh(MeshError::NoEligibleVersion("h".into())))
        );
        m.uneject("h", "v2");
        assert_eq!(&*m.select_version("h", &subs).unwrap(), "v2");
    }

    #[test]
    fn no_policy_means_equal_split_among_subscribers() {
        let mut m = mesh();
        assert_eq!(m.select_version("x", &[]), Err(RouteMiss::NoSubscriber));
        let subs = versions(&["a", "b"]);
        let picks: Vec<String> = (0..10).map(|_| m.select_version("x", &subs).unwrap().to_string()).collect();
        assert_eq!(picks.iter().filter(|p| *p == "a").count(), 5);
    }

    #[test]
    fn policy_naming_only_unsubscribed_versions_is_undeliverable() {
        let mut m = mesh();
        m.install_route(RouteSplitPolicy::new("h", &[("v2", 100)]), VirtualTime::ZERO)
            .unwrap();
        assert_eq!(m.select_version("h", &versions(&["v1"])), Err(RouteMiss::NoSubscriber));
    }
}
