//! In-process analog of the RIC message router.
//!
//! The plane owns the service registry, the subscription table and the
//! global delivery counters. It resolves a destination for each message
//! (subscribers filtered through mesh policy) and charges mesh hops; the
//! event loop owns timing and hands the message to the destination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::PlaneError;
use crate::mesh::{traverse, Mesh, RouteMiss};
use crate::sim::{RandomStream, VirtualTime};

pub const DEFAULT_PAYLOAD_BYTES: u32 = 256;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ServiceIdentity {
    pub name: Arc<str>,
    pub version: Arc<str>,
    pub namespace: Arc<str>,
}

impl ServiceIdentity {
    pub fn new(name: &str, version: &str, namespace: &str) -> Self {
        assert!(!version.is_empty(), "version tag must be non-empty");
        ServiceIdentity {
            name: Arc::from(name),
            version: Arc::from(version),
            namespace: Arc::from(namespace),
        }
    }

    /// Placeholder identity for traffic that reached nobody.
    pub fn unrouted(host: &str) -> Self {
        ServiceIdentity::new(host, "-", "-")
    }

    /// `namespace/name`, the service column of exports.
    pub fn qualified_name(&self) -> String {
        format!("{}/{}", self.namespace, self.name)
    }
}

impl fmt::Debug for ServiceIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}:{}", self.namespace, self.name, self.version)
    }
}

impl fmt::Display for ServiceIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    E2Indication,
    E2Control,
    SubscriptionReq,
    SubscriptionResp,
    HealthProbe,
    Registration,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::E2Indication => "E2_INDICATION",
            MessageKind::E2Control => "E2_CONTROL",
            MessageKind::SubscriptionReq => "SUBSCRIPTION_REQ",
            MessageKind::SubscriptionResp => "SUBSCRIPTION_RESP",
            MessageKind::HealthProbe => "HEALTH_PROBE",
            MessageKind::Registration => "REGISTRATION",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyId {
    SourceSidecar,
    DestinationSidecar,
    NodeProxy,
    Kernel,
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub proxy: ProxyId,
    pub latency_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MessageEnvelope {
    pub msg_id: u64,
    pub kind: MessageKind,
    pub source: ServiceIdentity,
    pub dest_host: Arc<str>,
    pub payload_bytes: u32,
    pub created_at: VirtualTime,
    pub delivered_at: Option<VirtualTime>,
    pub hops: Vec<Hop>,
    /// Filled in once routing resolved a destination.
    pub destination: Option<ServiceIdentity>,
}

impl MessageEnvelope {
    pub fn new(
        msg_id: u64,
        kind: MessageKind,
        source: ServiceIdentity,
        dest_host: &str,
        created_at: VirtualTime,
    ) -> Self {
        MessageEnvelope {
            msg_id,
            kind,
            source,
            dest_host: Arc::from(dest_host),
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            created_at,
            delivered_at: None,
            hops: Vec::new(),
            destination: None,
        }
    }

    pub fn hop_latency_ns(&self) -> u64 {
        self.hops.iter().map(|h| h.latency_ns).sum()
    }

    /// End-to-end latency; `None` until delivered.
    pub fn latency_ns(&self) -> Option<u64> {
        self.delivered_at
            .map(|d| d.saturating_sub(self.created_at))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RegistrationRecord {
    pub identity: ServiceIdentity,
    pub registered_at: VirtualTime,
}

/// `(kind, host)` to subscribers, kept sorted and duplicate-free.
#[derive(Clone, Debug, Default)]
pub struct SubscriptionTable {
    entries: BTreeMap<(MessageKind, Arc<str>), BTreeSet<ServiceIdentity>>,
}

impl SubscriptionTable {
    pub fn insert(&mut self, service: ServiceIdentity, kind: MessageKind, host: &str) -> bool {
        self.entries
            .entry((kind, Arc::from(host)))
            .or_default()
            .insert(service)
    }

    pub fn remove_service(&mut self, service: &ServiceIdentity) {
        self.entries.retain(|_, subs| {
            subs.remove(service);
            !subs.is_empty()
        });
    }

    pub fn subscribers(&self, kind: MessageKind, host: &str) -> impl Iterator<Item = &ServiceIdentity> {
        self.entries
            .get(&(kind, Arc::from(host)))
            .into_iter()
            .flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_by_gate: u64,
    pub dropped_by_queue: u64,
    pub undeliverable: u64,
}

impl PlaneCounters {
    pub fn settled(&self) -> u64 {
        self.delivered + self.dropped_by_gate + self.dropped_by_queue + self.undeliverable
    }

    /// Messages sent but not yet delivered or dropped.
    pub fn in_flight(&self) -> u64 {
        self.sent - self.settled()
    }

    pub fn is_conserved(&self) -> bool {
        self.sent == self.settled()
    }
}

/// Result of resolving one message.
#[derive(Debug)]
pub enum Dispatch {
    /// Charged with mesh hops; arrives at `destination` at `arrive_at`.
    Routed {
        env: Box<MessageEnvelope>,
        destination: ServiceIdentity,
        arrive_at: VirtualTime,
    },
    DroppedByGate(Box<MessageEnvelope>),
    Undeliverable(Box<MessageEnvelope>),
}

#[derive(Default)]
pub struct MsgPlane {
    registry: BTreeMap<ServiceIdentity, RegistrationRecord>,
    subscriptions: SubscriptionTable,
    counters: PlaneCounters,
    next_msg_id: u64,
}

impl MsgPlane {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, service: ServiceIdentity, now: VirtualTime) -> Result<RegistrationRecord, PlaneError> {
        if self.registry.contains_key(&service) {
            return Err(PlaneError::DuplicateRegistration(service.to_string()));
        }
        let rec = RegistrationRecord {
            identity: service.clone(),
            registered_at: now,
        };
        self.registry.insert(service, rec.clone());
        Ok(rec)
    }

    /// Removes a service and all its subscriptions.
    pub fn deregister(&mut self, service: &ServiceIdentity) -> Result<(), PlaneError> {
        if self.registry.remove(service).is_none() {
            return Err(PlaneError::UnknownService(service.to_string()));
        }
        self.subscriptions.remove_service(service);
        Ok(())
    }

    pub fn is_registered(&self, service: &ServiceIdentity) -> bool {
        self.registry.contains_key(service)
    }

    pub fn list_registered(&self) -> Vec<ServiceIdentity> {
        self.registry.keys().cloned().collect()
    }

    /// True if any registered service under `host` carries `version`.
    pub fn has_version(&self, host: &str, version: &str) -> bool {
        self.registry
            .keys()
            .any(|s| &*s.name == host && &*s.version == version)
    }

    pub fn subscribe(&mut self, service: &ServiceIdentity, kind: MessageKind, host: &str) -> Result<(), PlaneError> {
        if !self.registry.contains_key(service) {
            return Err(PlaneError::UnknownService(service.to_string()));
        }
        self.subscriptions.insert(service.clone(), kind, host);
        Ok(())
    }

    pub fn subscriptions(&self) -> &SubscriptionTable {
        &self.subscriptions
    }

    pub fn counters(&self) -> PlaneCounters {
        self.counters
    }

    pub fn next_msg_id(&mut self) -> u64 {
        self.next_msg_id += 1;
        self.next_msg_id
    }

    /// Counts `env` as sent and resolves its destination.
    ///
    /// `egress_open` is the sender-side gate verdict; only E2 control
    /// messages are subject to it.
    pub fn dispatch(
        &mut self,
        mut env: Box<MessageEnvelope>,
        egress_open: bool,
        mesh: &mut Mesh,
        rng: &mut RandomStream,
    ) -> Dispatch {
        self.counters.sent += 1;
        if env.kind == MessageKind::E2Control && !egress_open {
            self.counters.dropped_by_gate += 1;
            return Dispatch::DroppedByGate(env);
        }
        let subs: Vec<&ServiceIdentity> = self.subscriptions.subscribers(env.kind, &env.dest_host).collect();
        let mut versions: Vec<Arc<str>> = subs.iter().map(|s| s.version.clone()).collect();
        versions.sort();
        versions.dedup();
        let version = match mesh.select_version(&env.dest_host, &versions) {
            Ok(v) => v,
            Err(RouteMiss::NoSubscriber) | Err(RouteMiss::Mesh(_)) => {
                self.counters.undeliverable += 1;
                return Dispatch::Undeliverable(env);
            }
        };
        // several instances may share a version (one per namespace); the
        // lowest identity wins, keeping the choice deterministic
        let destination = subs
            .iter()
            .find(|s| s.version == version)
            .map(|s| (*s).clone())
            .expect("selected version has a subscriber");
        let added = traverse(&mut env, mesh.mode(), rng);
        let arrive_at = env.created_at.saturating_add(added);
        env.destination = Some(destination.clone());
        Dispatch::Routed {
            env,
            destination,
            arrive_at,
        }
    }

    pub fn note_delivered(&mut self) {
        self.counters.delivered += 1;
    }

    pub fn note_dropped_by_queue(&mut self) {
        self.counters.dropped_by_queue += 1;
    }

    /// A routed message whose destination vanished while in flight.
    pub fn note_undeliverable(&mut self) {
        self.counters.undeliverable += 1;
    }
}
