//! Data-plane architectures and their per-hop latency models.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::msgplane::{Hop, MessageEnvelope, ProxyId};
use crate::sim::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MeshKind {
    NoMesh,
    Sidecar,
    NodeProxy,
    InKernel,
}

impl MeshKind {
    pub const ALL: [MeshKind; 4] = [
        MeshKind::NoMesh,
        MeshKind::Sidecar,
        MeshKind::NodeProxy,
        MeshKind::InKernel,
    ];

    /// Proxy hops charged per one-way traversal: both sidecars for
    /// `Sidecar`, one shared node-level hop otherwise.
    pub fn hop_count(self) -> usize {
        match self {
            MeshKind::Sidecar => 2,
            MeshKind::NoMesh | MeshKind::NodeProxy | MeshKind::InKernel => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MeshKind::NoMesh => "NO_MESH",
            MeshKind::Sidecar => "SIDECAR",
            MeshKind::NodeProxy => "NODE_PROXY",
            MeshKind::InKernel => "IN_KERNEL",
        }
    }

    fn proxies(self) -> &'static [ProxyId] {
        match self {
            MeshKind::Sidecar => &[ProxyId::SourceSidecar, ProxyId::DestinationSidecar],
            MeshKind::NodeProxy => &[ProxyId::NodeProxy],
            MeshKind::InKernel => &[ProxyId::Kernel],
            MeshKind::NoMesh => &[ProxyId::Network],
        }
    }
}

impl fmt::Display for MeshKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which measured relation the default per-mode latencies are derived from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Burst profile: sidecar/node-proxy 1.61, node-proxy/no-mesh 1.11,
    /// no-mesh/in-kernel 1.60, anchored at 0.200 ms for in-kernel.
    #[default]
    Burst,
    /// Incremental profile: 1.11, 1.53 and 1.5612 for the same pairs.
    Incremental,
}

impl Calibration {
    /// Mean one-way added latency, summed over all hops of the mode.
    pub fn mean_added_latency_ns(self, kind: MeshKind) -> u64 {
        match (self, kind) {
            (Calibration::Burst, MeshKind::InKernel) => 200_000,
            (Calibration::Burst, MeshKind::NoMesh) => 320_000,
            (Calibration::Burst, MeshKind::NodeProxy) => 355_000,
            (Calibration::Burst, MeshKind::Sidecar) => 572_000,
            (Calibration::Incremental, MeshKind::InKernel) => 200_000,
            (Calibration::Incremental, MeshKind::NoMesh) => 312_240,
            (Calibration::Incremental, MeshKind::NodeProxy) => 477_727,
            (Calibration::Incremental, MeshKind::Sidecar) => 530_278,
        }
    }

    pub fn mode(self, kind: MeshKind, jitter_fraction: f64) -> MeshMode {
        let total = self.mean_added_latency_ns(kind);
        let hops = kind.hop_count() as u64;
        MeshMode::new(kind, total.div_ceil(hops), jitter_fraction)
    }
}

pub const DEFAULT_JITTER_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshMode {
    pub kind: MeshKind,
    pub per_hop_latency_ns: u64,
    pub jitter_fraction: f64,
}

impl MeshMode {
    pub fn new(kind: MeshKind, per_hop_latency_ns: u64, jitter_fraction: f64) -> Self {
        assert!(per_hop_latency_ns > 0, "per-hop latency must be positive");
        assert!(
            (0.0..1.0).contains(&jitter_fraction),
            "jitter fraction must lie in [0, 1)"
        );
        MeshMode {
            kind,
            per_hop_latency_ns,
            jitter_fraction,
        }
    }

    pub fn mean_added_latency_ns(&self) -> u64 {
        self.per_hop_latency_ns * self.kind.hop_count() as u64
    }

    /// Closed bounds of a single sampled hop.
    pub fn hop_bounds(&self) -> (u64, u64) {
        let mean = self.per_hop_latency_ns as f64;
        let lo = (mean * (1.0 - self.jitter_fraction)).ceil() as u64;
        let hi = (mean * (1.0 + self.jitter_fraction)).floor() as u64;
        (lo.min(hi).max(1), hi.max(lo).max(1))
    }

    pub fn sample_hop(&self, rng: &mut RandomStream) -> u64 {
        if self.jitter_fraction == 0.0 {
            return self.per_hop_latency_ns;
        }
        let (lo, hi) = self.hop_bounds();
        rng.uniform_inclusive(lo, hi)
    }
}

/// Charges the mode's hops to `env` and returns the added latency.
pub fn traverse(env: &mut MessageEnvelope, mode: &MeshMode, rng: &mut RandomStream) -> u64 {
    let mut added = 0;
    for &proxy in mode.kind.proxies() {
        let latency_ns = mode.sample_hop(rng);
        env.hops.push(Hop { proxy, latency_ns });
        added += latency_ns;
    }
    added
}
