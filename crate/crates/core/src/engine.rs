//! The simulated RIC: event loop wiring between message plane, mesh,
//! workloads and telemetry, plus the hook lifecycle flows plug into.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, MeshError, PlaneError};
use crate::mesh::{
    DestinationPolicy, EjectionState, Mesh, MeshMode, PendingId, PropagationConfig, RouteSplitPolicy, RouterKind,
};
use crate::msgplane::{Dispatch, MessageEnvelope, MessageKind, MsgPlane, PlaneCounters, ServiceIdentity};
use crate::sim::{secs_to_nanos, EventHandle, Pacer, RandomStream, Scheduler, VirtualTime};
use crate::telemetry::{DropReason, HistogramBounds, Telemetry, TelemetryConfig};
use crate::workloads::e2::{platform_identity, APP_MANAGER, E2_MANAGER, SUBSCRIPTION_MANAGER};
use crate::workloads::{
    probe, ArrivalSchedule, E2Manager, E2NodeProfile, Ingest, ProbeTracker, XAppInstance, XAppParams, XAppState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct XAppId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
pub enum Action<T> {
    Emit { node: NodeId, generation: u64 },
    Arrive(Box<MessageEnvelope>),
    Complete(XAppId),
    Control(XAppId),
    Commit(PendingId),
    Ready(XAppId),
    TeardownDone(XAppId),
    Uneject { host: Arc<str>, version: Arc<str> },
    Probe(XAppId),
    ApplyGate { host: String, version: String, allow: bool },
    Flow(T),
}

/// Mesh-added latency over every delivered message.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HopStats {
    pub count: u64,
    pub sum_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl HopStats {
    fn record(&mut self, ns: u64) {
        if self.count == 0 || ns < self.min_ns {
            self.min_ns = ns;
        }
        self.max_ns = self.max_ns.max(ns);
        self.count += 1;
        self.sum_ns += ns;
    }

    pub fn mean_ns(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_ns as f64 / self.count as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attach {
    /// Register at deploy, subscribe once running.
    Auto,
    /// The owning flow registers and subscribes explicitly.
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subscription {
    pub kind: MessageKind,
    pub host: String,
}

/// Everything needed to deploy one xApp version.
#[derive(Clone, Debug, PartialEq)]
pub struct XAppSpec {
    pub identity: ServiceIdentity,
    pub params: XAppParams,
    pub subscriptions: Vec<Subscription>,
    pub attach: Attach,
}

impl XAppSpec {
    /// Subscribed to indications addressed to its own name.
    pub fn new(identity: ServiceIdentity, params: XAppParams) -> Self {
        let host = identity.name.to_string();
        XAppSpec {
            identity,
            params,
            subscriptions: vec![Subscription {
                kind: MessageKind::E2Indication,
                host,
            }],
            attach: Attach::Auto,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorldSetup {
    pub seed: u64,
    pub mode: MeshMode,
    pub propagation: PropagationConfig,
    pub router: RouterKind,
    pub ejection_s: f64,
    pub telemetry: TelemetryConfig,
}

struct XAppSlot {
    inst: XAppInstance,
    spec: XAppSpec,
    undeployed_at: Option<VirtualTime>,
    tracker: ProbeTracker,
    probe_mark: (u64, u64),
}

struct NodeSlot {
    profile: E2NodeProfile,
    identity: ServiceIdentity,
    horizon_ns: u64,
    schedule: Option<ArrivalSchedule>,
    generation: u64,
    connected: bool,
    emitted: u64,
}

/// A lifecycle controller driven by its own timers.
pub trait Flow {
    type Timer;
    fn start(&mut self, world: &mut World<Self::Timer>) -> Result<(), Error>;
    fn on_timer(&mut self, world: &mut World<Self::Timer>, timer: Self::Timer) -> Result<(), Error>;
    fn is_done(&self) -> bool;
}

pub struct World<T> {
    sched: Scheduler<Action<T>>,
    pub plane: MsgPlane,
    pub mesh: Mesh,
    pub telemetry: Telemetry,
    pub e2mgr: E2Manager,
    xapps: Vec<XAppSlot>,
    live: BTreeMap<ServiceIdentity, XAppId>,
    nodes: Vec<NodeSlot>,
    node_index: BTreeMap<String, NodeId>,
    sinks: BTreeMap<ServiceIdentity, ()>,
    hop_rng: RandomStream,
    outlier_hosts: BTreeMap<(String, String), ()>,
    shutting_down: bool,
    seed: u64,
    hop_stats: HopStats,
}

impl<T> World<T> {
    pub fn new(setup: WorldSetup) -> Result<Self, String> {
        let root = RandomStream::new(setup.seed, "ranops");
        let bounds = match &setup.telemetry.histogram_bounds_ns {
            Some(b) => HistogramBounds::new(b.clone())?,
            None => HistogramBounds::default(),
        };
        let interval_ns = secs_to_nanos(setup.telemetry.interval_s);
        if interval_ns == 0 {
            return Err("telemetry interval must be positive".into());
        }
        let mut telemetry = Telemetry::new(interval_ns, bounds);
        telemetry.set_tracing(setup.telemetry.trace);
        let mesh = Mesh::new(setup.mode, setup.propagation, root.substream("mesh.router"))
            .with_router(setup.router)
            .with_ejection_ns(secs_to_nanos(setup.ejection_s));
        let mut w = World {
            sched: Scheduler::new(),
            plane: MsgPlane::new(),
            mesh,
            telemetry,
            e2mgr: E2Manager::default(),
            xapps: Vec::new(),
            live: BTreeMap::new(),
            nodes: Vec::new(),
            node_index: BTreeMap::new(),
            sinks: BTreeMap::new(),
            hop_rng: root.substream("mesh.hops"),
            outlier_hosts: BTreeMap::new(),
            shutting_down: false,
            seed: setup.seed,
            hop_stats: HopStats::default(),
        };
        w.add_sink(platform_identity(APP_MANAGER), MessageKind::Registration, APP_MANAGER);
        w.add_sink(platform_identity(SUBSCRIPTION_MANAGER), MessageKind::SubscriptionReq, SUBSCRIPTION_MANAGER);
        w.add_sink(platform_identity(E2_MANAGER), MessageKind::HealthProbe, E2_MANAGER);
        Ok(w)
    }

    fn add_sink(&mut self, id: ServiceIdentity, kind: MessageKind, host: &str) {
        let now = self.now();
        if !self.plane.is_registered(&id) {
            self.plane.register(id.clone(), now).expect("fresh sink");
        }
        self.plane.subscribe(&id, kind, host).expect("registered sink");
        self.sinks.insert(id, ());
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> VirtualTime {
        self.sched.now()
    }

    pub fn set_pacer(&mut self, pacer: Option<Pacer>) {
        self.sched.set_pacer(pacer);
    }

    pub fn events_executed(&self) -> u64 {
        self.sched.executed()
    }

    pub fn counters(&self) -> PlaneCounters {
        self.plane.counters()
    }

    pub fn hop_stats(&self) -> HopStats {
        self.hop_stats
    }

    pub fn schedule_flow(&mut self, at: VirtualTime, timer: T) -> Result<EventHandle, Error> {
        Ok(self.sched.schedule(at, Action::Flow(timer))?)
    }

    pub fn schedule_flow_in(&mut self, delay_ns: u64, timer: T) -> EventHandle {
        self.sched.schedule_in(delay_ns, Action::Flow(timer))
    }

    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.sched.cancel(handle)
    }

    // ---- E2 nodes ----

    /// Adds a traffic source that emits for `horizon_ns` of profile time.
    pub fn add_e2_node(&mut self, profile: E2NodeProfile, horizon_ns: u64) -> NodeId {
        let id = NodeId(self.nodes.len());
        let identity = profile.identity();
        self.e2mgr.register(&profile.gnb_id, &profile.plmn);
        self.add_sink(identity.clone(), MessageKind::E2Control, &profile.gnb_id);
        self.node_index.insert(profile.gnb_id.clone(), id);
        let connected = profile.connected;
        self.nodes.push(NodeSlot {
            profile,
            identity,
            horizon_ns,
            schedule: None,
            generation: 0,
            connected: false,
            emitted: 0,
        });
        if connected {
            let start = VirtualTime::from_secs_f64(self.nodes[id.0].profile.start_s).max(self.now());
            self.start_node(id, start);
        }
        id
    }

    fn start_node(&mut self, id: NodeId, start: VirtualTime) {
        let slot = &mut self.nodes[id.0];
        slot.connected = true;
        slot.generation += 1;
        let mut sched = slot.profile.profile.schedule(start, slot.horizon_ns);
        let first = sched.next();
        slot.schedule = Some(sched);
        let generation = slot.generation;
        if let Some(t) = first {
            self.sched
                .schedule(t, Action::Emit { node: id, generation })
                .expect("node start is not in the past");
        }
    }

    pub fn node_id(&self, gnb_id: &str) -> Option<NodeId> {
        self.node_index.get(gnb_id).copied()
    }

    pub fn node_profile(&self, id: NodeId) -> &E2NodeProfile {
        &self.nodes[id.0].profile
    }

    pub fn node_emitted(&self, id: NodeId) -> u64 {
        self.nodes[id.0].emitted
    }

    pub fn is_connected(&self, id: NodeId) -> bool {
        self.nodes[id.0].connected
    }

    /// Starts emission now, with profile time zero at the current instant.
    pub fn connect_node(&mut self, id: NodeId) {
        if !self.nodes[id.0].connected {
            let now = self.now();
            self.start_node(id, now);
        }
    }

    pub fn disconnect_node(&mut self, id: NodeId) {
        let slot = &mut self.nodes[id.0];
        slot.connected = false;
        slot.generation += 1;
        slot.schedule = None;
    }

    // ---- xApps ----

    pub fn deploy(&mut self, spec: XAppSpec) -> Result<XAppId, PlaneError> {
        if self.live.contains_key(&spec.identity) || self.plane.is_registered(&spec.identity) {
            return Err(PlaneError::DuplicateRegistration(spec.identity.to_string()));
        }
        let now = self.now();
        if spec.attach == Attach::Auto {
            self.plane.register(spec.identity.clone(), now)?;
        }
        let id = XAppId(self.xapps.len());
        let startup = spec.params.startup_ns();
        self.live.insert(spec.identity.clone(), id);
        self.xapps.push(XAppSlot {
            inst: XAppInstance::new(spec.identity.clone(), spec.params.clone(), now),
            spec,
            undeployed_at: None,
            tracker: ProbeTracker::default(),
            probe_mark: (0, 0),
        });
        self.sched.schedule_in(startup, Action::Ready(id));
        Ok(id)
    }

    /// Deregisters at once and finishes queued work during the teardown
    /// delay.
    pub fn undeploy(&mut self, id: XAppId) -> Result<(), PlaneError> {
        let now = self.now();
        let slot = &mut self.xapps[id.0];
        if slot.undeployed_at.is_some() {
            return Err(PlaneError::UnknownService(slot.spec.identity.to_string()));
        }
        slot.undeployed_at = Some(now);
        slot.inst.mark_terminating();
        let identity = slot.spec.identity.clone();
        let teardown = slot.spec.params.teardown_ns();
        self.live.remove(&identity);
        if self.plane.is_registered(&identity) {
            self.plane.deregister(&identity)?;
        }
        self.sched.schedule_in(teardown, Action::TeardownDone(id));
        Ok(())
    }

    pub fn register(&mut self, id: XAppId) -> Result<(), PlaneError> {
        let now = self.now();
        let identity = self.xapps[id.0].spec.identity.clone();
        self.plane.register(identity, now).map(|_| ())
    }

    pub fn subscribe(&mut self, id: XAppId) -> Result<(), PlaneError> {
        let slot = &self.xapps[id.0];
        for s in &slot.spec.subscriptions {
            self.plane.subscribe(&slot.spec.identity, s.kind, &s.host)?;
        }
        Ok(())
    }

    pub fn xapp(&self, id: XAppId) -> &XAppInstance {
        &self.xapps[id.0].inst
    }

    pub fn xapp_id(&self, identity: &ServiceIdentity) -> Option<XAppId> {
        self.live.get(identity).copied()
    }

    pub fn xapp_ids(&self) -> impl Iterator<Item = XAppId> {
        (0..self.xapps.len()).map(XAppId)
    }

    pub fn undeployed_at(&self, id: XAppId) -> Option<VirtualTime> {
        self.xapps[id.0].undeployed_at
    }

    /// Live instance under `host` with `version`, if any.
    pub fn find_version(&self, host: &str, version: &str) -> Option<XAppId> {
        self.live
            .iter()
            .find(|(k, _)| &*k.name == host && &*k.version == version)
            .map(|(_, v)| *v)
    }

    fn version_known(&self, host: &str, version: &str) -> bool {
        self.plane.has_version(host, version) || self.find_version(host, version).is_some()
    }

    /// Intervals during which the instance could send control messages to
    /// the E2 side: gate open, serving, and not yet undeployed.
    pub fn egress_windows(&self, id: XAppId, until: VirtualTime) -> Vec<(VirtualTime, VirtualTime)> {
        let slot = &self.xapps[id.0];
        let host = slot.spec.identity.name.to_string();
        let version = slot.spec.identity.version.to_string();
        let stop = slot.undeployed_at.unwrap_or(until).min(until);
        let mut points: Vec<(VirtualTime, u8, bool)> = Vec::new();
        for (t, s) in slot.inst.history() {
            points.push((*t, 0, s.serving()));
        }
        for g in self.mesh.gate_log() {
            if g.host == host && g.version == version {
                points.push((g.effective_at, 1, g.allow));
            }
        }
        points.sort_by_key(|p| p.0);
        let (mut serving, mut open) = (false, true);
        let mut out: Vec<(VirtualTime, VirtualTime)> = Vec::new();
        let mut since: Option<VirtualTime> = None;
        let mut i = 0;
        while i < points.len() {
            let t = points[i].0;
            while i < points.len() && points[i].0 == t {
                let (_, which, v) = points[i];
                if which == 0 {
                    serving = v;
                } else {
                    open = v;
                }
                i += 1;
            }
            let active = serving && open && t < stop;
            match (since, active) {
                (None, true) => since = Some(t),
                (Some(s), false) => {
                    out.push((s, t.min(stop)));
                    since = None;
                }
                _ => {}
            }
        }
        if let Some(s) = since {
            if s < stop {
                out.push((s, stop));
            }
        }
        out.retain(|(a, b)| b > a);
        out
    }

    // ---- mesh control ----

    pub fn install_route(&mut self, policy: RouteSplitPolicy) -> Result<(), MeshError> {
        let now = self.now();
        self.mesh.install_route(policy, now)
    }

    pub fn install_destination(&mut self, policy: &DestinationPolicy) {
        let now = self.now();
        for v in &policy.versions {
            self.outlier_hosts.insert((policy.host.clone(), v.version.clone()), ());
        }
        self.mesh.install_destination(policy, now);
    }

    /// Stages a split; returns the instant it takes effect.
    pub fn apply_route_split(&mut self, policy: RouteSplitPolicy) -> Result<VirtualTime, MeshError> {
        let now = self.now();
        let known: Vec<(String, bool)> = policy
            .versions()
            .map(|v| (v.to_string(), self.version_known(&policy.host, v)))
            .collect();
        let (at, id) = self.mesh.apply_route_split(policy, now, |_, v| {
            known.iter().any(|(k, ok)| k == v && *ok)
        })?;
        self.sched.schedule(at, Action::Commit(id)).expect("commit is in the future");
        Ok(at)
    }

    pub fn gate_egress(&mut self, host: &str, version: &str, allow: bool) -> Result<VirtualTime, MeshError> {
        let now = self.now();
        let known = self.version_known(host, version);
        let (at, id) = self.mesh.gate_egress(host, version, allow, now, |_, _| known)?;
        self.sched.schedule(at, Action::Commit(id)).expect("commit is in the future");
        Ok(at)
    }

    /// Closes `from` and, `gap_ns` after that takes effect, opens `to`, so
    /// the two versions never hold egress at the same instant. Returns the
    /// effective times of the close and the open.
    pub fn flip_egress(
        &mut self,
        host: &str,
        from: &str,
        to: &str,
        gap_ns: u64,
    ) -> Result<(VirtualTime, VirtualTime), MeshError> {
        if !self.version_known(host, to) {
            return Err(MeshError::UnknownVersion {
                host: host.to_string(),
                version: to.to_string(),
            });
        }
        let closed = self.gate_egress(host, from, false)?;
        self.sched.schedule_in(
            gap_ns,
            Action::ApplyGate {
                host: host.to_string(),
                version: to.to_string(),
                allow: true,
            },
        );
        Ok((closed, closed.saturating_add(gap_ns)))
    }

    // ---- messaging ----

    /// Sends a message created now.
    pub fn send(&mut self, mut env: MessageEnvelope) {
        env.msg_id = self.plane.next_msg_id();
        env.created_at = self.now();
        let egress_open = self
            .mesh
            .egress_allowed(&env.source.name, &env.source.version);
        let now = self.now();
        match self
            .plane
            .dispatch(Box::new(env), egress_open, &mut self.mesh, &mut self.hop_rng)
        {
            Dispatch::Routed { env, arrive_at, .. } => {
                self.sched
                    .schedule(arrive_at, Action::Arrive(env))
                    .expect("arrival is not in the past");
            }
            Dispatch::DroppedByGate(env) => self.telemetry.record_drop(&env, DropReason::Gate, now),
            Dispatch::Undeliverable(env) => self.telemetry.record_drop(&env, DropReason::Undeliverable, now),
        }
    }

    /// Sends a platform request (registration, subscription) on behalf of
    /// `source`.
    pub fn send_platform(&mut self, kind: MessageKind, source: &ServiceIdentity, host: &str) {
        let env = MessageEnvelope::new(0, kind, source.clone(), host, self.now());
        self.send(env);
    }

    // ---- event handling ----

    pub fn shutdown(&mut self) {
        self.shutting_down = true;
    }

    pub fn is_shutting_down(&self) -> bool {
        self.shutting_down
    }

    fn handle(&mut self, now: VirtualTime, action: Action<T>) {
        match action {
            Action::Emit { node, generation } => self.on_emit(node, generation),
            Action::Arrive(env) => self.on_arrive(now, env),
            Action::Complete(id) => self.on_complete(now, id),
            Action::Control(id) => self.on_control(id),
            Action::Commit(id) => self.mesh.commit(id, now),
            Action::Ready(id) => self.on_ready(now, id),
            Action::TeardownDone(id) => self.on_teardown(now, id),
            Action::Uneject { host, version } => self.mesh.uneject(&host, &version),
            Action::Probe(id) => self.on_probe(now, id),
            Action::ApplyGate { host, version, allow } => {
                // the version may have been undeployed meanwhile; then there is nothing to open
                let _ = self.gate_egress(&host, &version, allow);
            }
            Action::Flow(_) => unreachable!("flow timers are routed by the simulation"),
        }
    }

    fn on_emit(&mut self, node: NodeId, generation: u64) {
        let slot = &mut self.nodes[node.0];
        if self.shutting_down || slot.generation != generation || !slot.connected {
            return;
        }
        slot.emitted += 1;
        let mut env = MessageEnvelope::new(
            0,
            MessageKind::E2Indication,
            slot.identity.clone(),
            &slot.profile.host,
            VirtualTime::ZERO,
        );
        env.payload_bytes = slot.profile.payload_bytes;
        let next = slot.schedule.as_mut().and_then(Iterator::next);
        self.send(env);
        if let Some(t) = next {
            self.sched
                .schedule(t, Action::Emit { node, generation })
                .expect("arrivals are non-decreasing");
        }
    }

    fn undeliverable(&mut self, now: VirtualTime, env: Box<MessageEnvelope>) {
        self.plane.note_undeliverable();
        self.telemetry.record_drop(&env, DropReason::Undeliverable, now);
    }

    fn on_arrive(&mut self, now: VirtualTime, mut env: Box<MessageEnvelope>) {
        let dest = env.destination.clone().expect("routed message has a destination");
        if self.sinks.contains_key(&dest) {
            env.delivered_at = Some(now);
            self.hop_stats.record(env.hop_latency_ns());
            self.plane.note_delivered();
            self.telemetry.record_delivery(&env);
            return;
        }
        // the instance may have been undeployed while the message was in flight
        let Some(id) = self
            .xapps
            .iter()
            .rposition(|s| s.spec.identity == dest)
            .map(XAppId)
        else {
            return self.undeliverable(now, env);
        };
        let state = self.xapps[id.0].inst.state();
        if matches!(state, XAppState::Starting | XAppState::Terminated) {
            return self.undeliverable(now, env);
        }
        let host = dest.name.to_string();
        let version = dest.version.to_string();
        let error = match self.xapps[id.0].inst.ingest(env, now) {
            Ingest::Accepted { completes_at } => {
                self.sched
                    .schedule(completes_at, Action::Complete(id))
                    .expect("completion is not in the past");
                false
            }
            Ingest::Dropped(env) => {
                self.plane.note_dropped_by_queue();
                self.telemetry.record_drop(&env, DropReason::Queue, now);
                true
            }
        };
        if self.outlier_hosts.contains_key(&(host.clone(), version.clone()))
            && self.mesh.report_outlier(&host, &version, error) == EjectionState::Ejected
        {
            let ns = self.mesh.ejection_ns();
            self.sched.schedule_in(
                ns,
                Action::Uneject {
                    host: Arc::from(host.as_str()),
                    version: Arc::from(version.as_str()),
                },
            );
        }
    }

    fn on_complete(&mut self, now: VirtualTime, id: XAppId) {
        let Some(mut env) = self.xapps[id.0].inst.complete() else {
            return;
        };
        env.delivered_at = Some(now);
        self.hop_stats.record(env.hop_latency_ns());
        self.plane.note_delivered();
        self.telemetry.record_delivery(&env);
    }

    fn on_ready(&mut self, now: VirtualTime, id: XAppId) {
        let slot = &mut self.xapps[id.0];
        if slot.undeployed_at.is_some() {
            return;
        }
        slot.inst.set_state(XAppState::Running, now);
        if slot.spec.attach == Attach::Auto {
            self.subscribe(id).expect("auto-attached instance is registered");
        }
        let slot = &self.xapps[id.0];
        if slot.spec.params.control.is_some() {
            self.sched.schedule_in(0, Action::Control(id));
        }
        if let Some(p) = &slot.spec.params.probe {
            let period = secs_to_nanos(p.period_s);
            self.sched.schedule_in(period, Action::Probe(id));
        }
    }

    fn on_control(&mut self, id: XAppId) {
        if self.shutting_down {
            return;
        }
        let now = self.now();
        let slot = &mut self.xapps[id.0];
        let Some(ctrl) = slot.spec.params.control.clone() else {
            return;
        };
        let Some(env) = slot.inst.control_message(0, now) else {
            return;
        };
        self.send(env);
        self.sched
            .schedule_in(secs_to_nanos(ctrl.period_ms / 1000.0), Action::Control(id));
    }

    fn on_probe(&mut self, now: VirtualTime, id: XAppId) {
        if self.shutting_down {
            return;
        }
        let slot = &mut self.xapps[id.0];
        let Some(p) = slot.spec.params.probe.clone() else {
            return;
        };
        if slot.undeployed_at.is_some() || slot.inst.state() == XAppState::Failed {
            return;
        }
        let c = slot.inst.counters();
        let (processed, dropped) = (c.processed - slot.probe_mark.0, c.dropped_by_queue - slot.probe_mark.1);
        slot.probe_mark = (c.processed, c.dropped_by_queue);
        let fraction = crate::telemetry::error_fraction_of(processed, dropped);
        let result = probe(slot.inst.state(), fraction, p.max_error_fraction);
        if slot.tracker.observe(result, p.failure_threshold) {
            slot.inst.set_state(XAppState::Failed, now);
            return;
        }
        self.sched.schedule_in(secs_to_nanos(p.period_s), Action::Probe(id));
    }

    fn on_teardown(&mut self, now: VirtualTime, id: XAppId) {
        let slot = &mut self.xapps[id.0];
        let leftovers = slot.inst.flush();
        slot.inst.set_state(XAppState::Terminated, now);
        for env in leftovers {
            self.plane.note_dropped_by_queue();
            self.telemetry.record_drop(&env, DropReason::Queue, now);
        }
    }

    /// Marks `id` FAILED (used by flows that run probes themselves).
    pub fn fail_xapp(&mut self, id: XAppId) {
        let now = self.now();
        self.xapps[id.0].inst.set_state(XAppState::Failed, now);
    }

    /// Every instance satisfies processed + queued + dropped == arrivals.
    pub fn work_conserved(&self) -> bool {
        self.xapps.iter().all(|s| s.inst.is_conserving())
    }
}

/// Result of driving a flow to completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunEnd {
    /// When the flow reported done.
    pub done_at: VirtualTime,
    /// Clock after in-flight work drained.
    pub drained_at: VirtualTime,
}

/// Runs `flow` until it is done (or `limit` passes), then stops all sources
/// and drains in-flight messages.
pub fn run_flow<F: Flow>(world: &mut World<F::Timer>, flow: &mut F, limit: VirtualTime) -> Result<RunEnd, Error> {
    flow.start(world)?;
    let mut done_at = if flow.is_done() { Some(world.now()) } else { None };
    if done_at.is_some() {
        world.shutdown();
    }
    while let Some((now, action)) = world.sched.pop_due(limit) {
        match action {
            Action::Flow(timer) => {
                if done_at.is_none() {
                    flow.on_timer(world, timer)?;
                    if flow.is_done() {
                        done_at = Some(now);
                        world.shutdown();
                    }
                }
            }
            other => world.handle(now, other),
        }
    }
    let done_at = done_at.unwrap_or(world.now());
    if !world.shutting_down {
        // limit reached: stop sources and let in-flight work finish
        world.shutdown();
        while let Some((now, action)) = world.sched.pop_due(VirtualTime::MAX) {
            if !matches!(action, Action::Flow(_)) {
                world.handle(now, action);
            }
        }
    }
    let drained_at = world.now();
    world.telemetry.close(done_at);
    Ok(RunEnd { done_at, drained_at })
}

/// A flow that just lets traffic run for a fixed time.
pub struct HorizonFlow {
    pub until: VirtualTime,
    done: bool,
}

impl HorizonFlow {
    pub fn new(until: VirtualTime) -> Self {
        HorizonFlow { until, done: false }
    }
}

impl Flow for HorizonFlow {
    type Timer = ();

    fn start(&mut self, world: &mut World<()>) -> Result<(), Error> {
        world.schedule_flow(self.until, ())?;
        Ok(())
    }

    fn on_timer(&mut self, _world: &mut World<()>, _timer: ()) -> Result<(), Error> {
        self.done = true;
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
