//! Scenario files: TOML with unknown keys rejected, dotted-path overrides
//! applied after parsing and before validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Attach, Subscription, XAppSpec};
use crate::error::ConfigError;
use crate::lifecycle::plan::FlowPlan;
use crate::lifecycle::template::parse_binding;
use crate::mesh::{
    Calibration, DestinationPolicy, MeshKind, MeshMode, RouteSplitPolicy, RouterKind, DEFAULT_JITTER_FRACTION,
};
use crate::msgplane::{MessageKind, ServiceIdentity};
use crate::sim::secs_to_nanos;
use crate::telemetry::TelemetryConfig;
use crate::workloads::{ControlLoop, E2NodeProfile, HealthProbe, XAppParams};

pub const SEED_ENV: &str = "RANOPS_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    #[serde(default = "default_mode")]
    pub mode: MeshKind,
    #[serde(default)]
    pub calibration: Calibration,
    /// Per-mode mean added latency (ns, summed over hops); replaces the
    /// calibration table entry.
    #[serde(default)]
    pub added_latency_ns: BTreeMap<MeshKind, u64>,
    #[serde(default = "default_jitter")]
    pub jitter_fraction: f64,
    #[serde(default = "default_push_delay_s")]
    pub push_delay_s: f64,
    #[serde(default)]
    pub router: RouterKind,
    #[serde(default = "default_ejection_s")]
    pub ejection_s: f64,
    #[serde(default)]
    pub routes: Vec<RouteSplitPolicy>,
    #[serde(default)]
    pub destinations: Vec<DestinationPolicy>,
}

fn default_mode() -> MeshKind {
    MeshKind::Sidecar
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER_FRACTION
}
fn default_push_delay_s() -> f64 {
    0.5
}
fn default_ejection_s() -> f64 {
    30.0
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            mode: default_mode(),
            calibration: Calibration::default(),
            added_latency_ns: BTreeMap::new(),
            jitter_fraction: default_jitter(),
            push_delay_s: default_push_delay_s(),
            router: RouterKind::default(),
            ejection_s: default_ejection_s(),
            routes: Vec::new(),
            destinations: Vec::new(),
        }
    }
}

impl MeshConfig {
    pub fn mesh_mode(&self, kind: MeshKind) -> MeshMode {
        match self.added_latency_ns.get(&kind) {
            Some(&total) => MeshMode::new(kind, total.div_ceil(kind.hop_count() as u64), self.jitter_fraction),
            None => self.calibration.mode(kind, self.jitter_fraction),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XAppConfig {
    pub name: String,
    pub version: String,
    #[serde(default = "default_namespace")]
    pub namespace: String,
    /// Deployed at t = 0; flows deploy the others on demand.
    #[serde(default = "default_true")]
    pub autostart: bool,
    /// Defaults to E2 indications addressed to `name`.
    #[serde(default)]
    pub subscriptions: Option<Vec<Subscription>>,
    #[serde(default = "default_capacity")]
    pub capacity_msgs_per_s: f64,
    #[serde(default = "default_queue")]
    pub queue_capacity: u32,
    #[serde(default = "default_startup")]
    pub startup_s: f64,
    #[serde(default = "default_teardown")]
    pub teardown_s: f64,
    #[serde(default)]
    pub control: Option<ControlLoop>,
    #[serde(default)]
    pub probe: Option<HealthProbe>,
}

fn default_namespace() -> String {
    "ricxapp".into()
}
fn default_true() -> bool {
    true
}
fn default_capacity() -> f64 {
    XAppParams::default().capacity_msgs_per_s
}
fn default_queue() -> u32 {
    XAppParams::default().queue_capacity
}
fn default_startup() -> f64 {
    XAppParams::default().startup_s
}
fn default_teardown() -> f64 {
    XAppParams::default().teardown_s
}

impl XAppConfig {
    pub fn identity(&self) -> ServiceIdentity {
        ServiceIdentity::new(&self.name, &self.version, &self.namespace)
    }

    pub fn params(&self) -> XAppParams {
        XAppParams {
            capacity_msgs_per_s: self.capacity_msgs_per_s,
            queue_capacity: self.queue_capacity,
            startup_s: self.startup_s,
            teardown_s: self.teardown_s,
            control: self.control.clone(),
            probe: self.probe.clone(),
        }
    }

    pub fn spec(&self) -> XAppSpec {
        let mut spec = XAppSpec::new(self.identity(), self.params());
        if let Some(s) = &self.subscriptions {
            spec.subscriptions = s.clone();
        }
        spec.attach = Attach::Auto;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Hard stop for the event loop, in seconds.
    #[serde(default)]
    pub horizon_s: Option<f64>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub e2nodes: Vec<E2NodeProfile>,
    #[serde(default)]
    pub xapps: Vec<XAppConfig>,
    pub flow: FlowPlan,
    #[serde(default)]
    pub telemetry: TelemetryConfig,
}

/// Splits `a.b.c=value`.
pub fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (path, value) = s.split_once('=').ok_or_else(|| ConfigError::BadOverride(s.to_string()))?;
    let keys: Vec<String> = path.trim().split('.').map(|k| k.trim().to_string()).collect();
    if keys.iter().any(String::is_empty) {
        return Err(ConfigError::BadOverride(s.to_string()));
    }
    Ok((keys, parse_binding(value.trim())))
}

/// Sets a dotted path, creating tables on the way. Numeric segments index
/// arrays.
pub fn apply_override(root: &mut toml::Table, keys: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let dotted = keys.join(".");
    let bad = |why: &str| ConfigError::Invalid {
        path: format!("--set {dotted}"),
        message: why.to_string(),
    };
    let mut cur: &mut toml::Value = root
        .entry(keys[0].clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if keys.len() == 1 {
        *cur = value;
        return Ok(());
    }
    for (i, k) in keys.iter().enumerate().skip(1) {
        let last = i + 1 == keys.len();
        cur = match cur {
            toml::Value::Table(t) => {
                if last {
                    t.insert(k.clone(), value);
                    return Ok(());
                }
                t.entry(k.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = k.parse().map_err(|_| bad(&format!("`{k}` is not an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| bad(&format!("index {idx} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(&format!("`{}` is not a table", keys[..i].join(".")))),
        };
    }
    unreachable!("loop returns on the last key")
}

impl ScenarioConfig {
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        };
        let cfg: ScenarioConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(parse_err)?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(parse_err)?;
            for o in overrides {
                let (keys, value) = parse_override(o)?;
                apply_override(&mut table, &keys, value)?;
            }
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
                path: format!("{origin} (after --set overrides)"),
                message: e.to_string(),
            })?
        };
        cfg.validate().map_err(|message| ConfigError::Invalid {
            path: origin.to_string(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string(), overrides)?;
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    /// Replaces the flow section, e.g. with an instantiated template, and
    /// revalidates.
    pub fn with_flow(mut self, flow: FlowPlan, origin: &str) -> Result<Self, ConfigError> {
        self.flow = flow;
        self.validate().map_err(|message| ConfigError::Invalid {
            path: origin.to_string(),
            message,
        })?;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or(self.flow.name())
    }

    pub fn xapp(&self, host: &str, version: &str) -> Option<&XAppConfig> {
        self.xapps.iter().find(|x| x.name == host && x.version == version)
    }

    pub fn push_delay_ns(&self) -> u64 {
        secs_to_nanos(self.mesh.push_delay_s)
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = &self.mesh;
        if !(0.0..1.0).contains(&m.jitter_fraction) {
            return Err(format!("mesh.jitter_fraction must lie in [0, 1), got {}", m.jitter_fraction));
        }
        if !(m.push_delay_s.is_finite() && m.push_delay_s >= 0.0) {
            return Err(format!("mesh.push_delay_s must be non-negative, got {}", m.push_delay_s));
        }
        if !(m.ejection_s.is_finite() && m.ejection_s >= 0.0) {
            return Err(format!("mesh.ejection_s must be non-negative, got {}", m.ejection_s));
        }
        for (k, v) in &m.added_latency_ns {
            if *v == 0 {
                return Err(format!("mesh.added_latency_ns.{k} must be positive"));
            }
        }
        if !(self.telemetry.interval_s.is_finite() && secs_to_nanos(self.telemetry.interval_s) > 0) {
            return Err(format!("telemetry.interval_s must be positive, got {}", self.telemetry.interval_s));
        }
        if let Some(b) = &self.telemetry.histogram_bounds_ns {
            crate::telemetry::HistogramBounds::new(b.clone()).map_err(|e| format!("telemetry.histogram_bounds_ns: {e}"))?;
        }
        if let Some(h) = self.horizon_s {
            if !(h.is_finite() && h > 0.0) {
                return Err(format!("horizon_s must be positive, got {h}"));
            }
        }
        let mut ids = BTreeSet::new();
        for (i, x) in self.xapps.iter().enumerate() {
            if x.name.is_empty() || x.version.is_empty() || x.namespace.is_empty() {
                return Err(format!("xapps[{i}]: name, version and namespace must be non-empty"));
            }
            x.params().validate().map_err(|e| format!("xapps[{i}] ({}): {e}", x.identity()))?;
            if !ids.insert((x.name.clone(), x.version.clone())) {
                return Err(format!("xapps[{i}]: {}:{} is defined twice", x.name, x.version));
            }
        }
        let known = |host: &str, v: &str| ids.contains(&(host.to_string(), v.to_string()));
        for (i, r) in m.routes.iter().enumerate() {
            r.validate().map_err(|e| format!("mesh.routes[{i}]: {e}"))?;
            if let Some(v) = r.versions().find(|v| !known(&r.host, v)) {
                return Err(format!("mesh.routes[{i}]: version {v} is not defined under host {}", r.host));
            }
        }
        for (i, d) in m.destinations.iter().enumerate() {
            if let Some(v) = d.versions.iter().find(|v| !known(&d.host, &v.version)) {
                return Err(format!("mesh.destinations[{i}]: version {} is not defined under host {}", v.version, d.host));
            }
        }
        let mut gnbs = BTreeSet::new();
        for (i, n) in self.e2nodes.iter().enumerate() {
            n.validate().map_err(|e| format!("e2nodes[{i}]: {e}"))?;
            if !gnbs.insert(n.gnb_id.clone()) {
                return Err(format!("e2nodes[{i}]: gnb_id {} is defined twice", n.gnb_id));
            }
        }
        self.flow.validate()?;
        match &self.flow {
            FlowPlan::Canary(p) => {
                for v in [&p.stable_version, &p.candidate_version] {
                    if !known(&p.host, v) {
                        return Err(format!("flow: no xapps entry for {}:{v}", p.host));
                    }
                }
            }
            FlowPlan::Ab(p) => {
                for v in [&p.version_a, &p.version_b] {
                    if !known(&p.host, v) {
                        return Err(format!("flow: no xapps entry for {}:{v}", p.host));
                    }
                }
            }
            _ => {}
        }
        for x in &self.xapps {
            for s in x.subscriptions.iter().flatten() {
                if s.kind == MessageKind::E2Control {
                    return Err(format!("xapps {}: E2_CONTROL is reserved for E2 nodes", x.identity()));
                }
            }
        }
        Ok(())
    }
}

/// CLI value first, then the config file, then the environment.
pub fn resolve_seed(cli: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64, ConfigError> {
    if let Some(s) = cli.or(config) {
        return Ok(s);
    }
    match env {
        Some(raw) => raw.trim().parse().map_err(|_| ConfigError::Invalid {
            path: SEED_ENV.into(),
            message: format!("`{raw}` is not an unsigned integer"),
        }),
        None => Ok(DEFAULT_SEED),
    }
}
