//! Concrete, validated plans for each flow.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mesh::MeshKind;
use crate::workloads::XAppParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowPlan {
    Migrate(MigrationPlan),
    Canary(RolloutPlan),
    Ab(AbPlan),
    Meshbench(MeshBenchPlan),
    Crudbench(CrudBenchPlan),
}

impl FlowPlan {
    pub fn name(&self) -> &'static str {
        match self {
            FlowPlan::Migrate(_) => "migrate",
            FlowPlan::Canary(_) => "canary",
            FlowPlan::Ab(_) => "ab",
            FlowPlan::Meshbench(_) => "meshbench",
            FlowPlan::Crudbench(_) => "crudbench",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            FlowPlan::Migrate(p) => p.validate(),
            FlowPlan::Canary(p) => p.validate(),
            FlowPlan::Ab(p) => p.validate(),
            FlowPlan::Meshbench(p) => p.validate(),
            FlowPlan::Crudbench(p) => p.validate(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

fn non_negative(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(format!("{name} must be non-negative, got {v}"))
    }
}

// ---- canary ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criteria {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_max_error_fraction")]
    pub max_error_fraction: f64,
    #[serde(default = "default_max_mean_latency_ms")]
    pub max_mean_latency_ms: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Criteria {
            enabled: true,
            max_error_fraction: default_max_error_fraction(),
            max_mean_latency_ms: default_max_mean_latency_ms(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_max_error_fraction() -> f64 {
    crate::workloads::health::DEFAULT_MAX_ERROR_FRACTION
}
fn default_max_mean_latency_ms() -> f64 {
    crate::workloads::health::DEFAULT_MAX_MEAN_LATENCY_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutPlan {
    pub host: String,
    pub stable_version: String,
    pub candidate_version: String,
    #[serde(default = "default_step_pct")]
    pub step_pct: u32,
    /// Explicit candidate weights; overrides `step_pct` when present.
    #[serde(default)]
    pub steps: Option<Vec<u32>>,
    #[serde(default = "default_interval_s")]
    pub interval_s: f64,
    #[serde(default)]
    pub criteria: Criteria,
    #[serde(default = "default_true")]
    pub rollback_on_failure: bool,
}

fn default_step_pct() -> u32 {
    5
}
fn default_interval_s() -> f64 {
    360.0
}

impl RolloutPlan {
    /// Candidate weight after each shift, ending at 100.
    pub fn weights(&self) -> Vec<u32> {
        if let Some(s) = &self.steps {
            return s.clone();
        }
        let mut w = Vec::new();
        let mut k = 1;
        loop {
            let v = (k * self.step_pct).min(100);
            w.push(v);
            if v == 100 {
                return w;
            }
            k += 1;
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("host", &self.host),
            ("stable_version", &self.stable_version),
            ("candidate_version", &self.candidate_version),
        ] {
            if v.is_empty() {
                return Err(format!("flow.{name} must be non-empty"));
            }
        }
        if self.stable_version == self.candidate_version {
            return Err("flow.candidate_version must differ from flow.stable_version".into());
        }
        if !(1..=100).contains(&self.step_pct) {
            return Err(format!("flow.step_pct must lie in (0, 100], got {}", self.step_pct));
        }
        if let Some(s) = &self.steps {
            if s.is_empty() {
                return Err("flow.steps must be non-empty".into());
            }
            if s.windows(2).any(|w| w[0] >= w[1]) || s[0] == 0 {
                return Err(format!("flow.steps must be strictly increasing and positive, got {s:?}"));
            }
            if *s.last().unwrap() != 100 {
                return Err(format!("flow.steps must end at 100, got {s:?}"));
            }
        }
        positive("flow.interval_s", self.interval_s)?;
        if !(0.0..=1.0).contains(&self.criteria.max_error_fraction) {
            return Err("flow.criteria.max_error_fraction must lie in [0, 1]".into());
        }
        positive("flow.criteria.max_mean_latency_ms", self.criteria.max_mean_latency_ms)
    }
}

// ---- A/B ----

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WinnerMetric {
    #[default]
    MeanLatency,
    ErrorRate,
    Throughput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbPlan {
    pub host: String,
    pub version_a: String,
    pub version_b: String,
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default = "default_switchover_s")]
    pub switchover_s: f64,
    #[serde(default = "default_gap_s")]
    pub actuation_gap_s: f64,
    #[serde(default)]
    pub winner_metric: WinnerMetric,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: u32,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Ingress share of A; B gets the rest.
    #[serde(default = "default_split_a")]
    pub split_a: u32,
}

fn default_duration_s() -> f64 {
    600.0
}
fn default_switchover_s() -> f64 {
    300.0
}
fn default_gap_s() -> f64 {
    6.0
}
fn default_resamples() -> u32 {
    1000
}
fn default_confidence() -> f64 {
    0.95
}
fn default_split_a() -> u32 {
    50
}

impl AbPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.host.is_empty() || self.version_a.is_empty() || self.version_b.is_empty() {
            return Err("flow.host, flow.version_a and flow.version_b must be non-empty".into());
        }
        if self.version_a == self.version_b {
            return Err("flow.version_a and flow.version_b must differ".into());
        }
        positive("flow.duration_s", self.duration_s)?;
        non_negative("flow.actuation_gap_s", self.actuation_gap_s)?;
        if !(self.switchover_s > 0.0 && self.switchover_s < self.duration_s) {
            return Err(format!(
                "flow.switchover_s must lie in (0, duration_s = {}), got {}",
                self.duration_s, self.switchover_s
            ));
        }
        if self.switchover_s + self.actuation_gap_s >= self.duration_s {
            return Err("flow.switchover_s + flow.actuation_gap_s must end before flow.duration_s".into());
        }
        if self.bootstrap_resamples == 0 {
            return Err("flow.bootstrap_resamples must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(format!("flow.confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.split_a > 100 {
            return Err(format!("flow.split_a must lie in [0, 100], got {}", self.split_a));
        }
        Ok(())
    }
}

// ---- migration ----

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApprovalMode {
    #[default]
    Auto,
    Interactive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBudgets {
    #[serde(default = "b_plmn")]
    pub plmn_s: f64,
    #[serde(default = "b_deploy")]
    pub deploy_s: f64,
    #[serde(default = "b_registration")]
    pub registration_s: f64,
    #[serde(default = "b_subscription")]
    pub subscription_s: f64,
    #[serde(default = "b_verify")]
    pub verify_s: f64,
    #[serde(default = "b_persist")]
    pub persist_s: f64,
    /// Runs after approval and is not part of the phase time.
    #[serde(default = "b_teardown")]
    pub teardown_s: f64,
}

fn b_plmn() -> f64 {
    0.5
}
fn b_deploy() -> f64 {
    2.0
}
fn b_registration() -> f64 {
    0.5
}
fn b_subscription() -> f64 {
    0.5
}
fn b_verify() -> f64 {
    2.0
}
fn b_persist() -> f64 {
    0.1
}
fn b_teardown() -> f64 {
    1.0
}

impl Default for PhaseBudgets {
    fn default() -> Self {
        PhaseBudgets {
            plmn_s: b_plmn(),
            deploy_s: b_deploy(),
            registration_s: b_registration(),
            subscription_s: b_subscription(),
            verify_s: b_verify(),
            persist_s: b_persist(),
            teardown_s: b_teardown(),
        }
    }
}

impl PhaseBudgets {
    pub fn automated_s(&self) -> f64 {
        self.plmn_s + self.deploy_s + self.registration_s + self.subscription_s + self.verify_s + self.persist_s
    }

    fn validate(&self) -> Result<(), String> {
        for (n, v) in [
            ("plmn_s", self.plmn_s),
            ("deploy_s", self.deploy_s),
            ("registration_s", self.registration_s),
            ("subscription_s", self.subscription_s),
            ("verify_s", self.verify_s),
            ("persist_s", self.persist_s),
            ("teardown_s", self.teardown_s),
        ] {
            non_negative(&format!("flow.budgets.{n}"), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationXApp {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: String,
    /// Each phase deploys into `<namespace>-<gnb_id>`.
    #[serde(default = "default_namespace")]
    pub namespace: String,
    #[serde(default)]
    pub params: XAppParams,
}

fn default_version() -> String {
    "v1".into()
}
fn default_namespace() -> String {
    "ricxapp".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub gnb_id: String,
    /// Expected PLMN; any advertised PLMN passes when absent.
    #[serde(default)]
    pub plmn: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MigrationPlan {
    pub xapp: MigrationXApp,
    #[serde(default = "default_phases")]
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub budgets: PhaseBudgets,
    #[serde(default)]
    pub approval: ApprovalMode,
    /// Queue-drop fraction tolerated by the health check at the end of
    /// verification.
    #[serde(default = "default_max_error_fraction")]
    pub max_error_fraction: f64,
}

fn default_phases() -> Vec<PhaseSpec> {
    ["gnb-sim", "gnb-emu", "gnb-real"]
        .into_iter()
        .map(|g| PhaseSpec {
            gnb_id: g.into(),
            plmn: None,
        })
        .collect()
}

impl MigrationPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.xapp.name.is_empty() {
            return Err("flow.xapp.name must be non-empty".into());
        }
        if self.phases.is_empty() {
            return Err("flow.phases must be non-empty".into());
        }
        self.xapp.params.validate().map_err(|e| format!("flow.xapp.params: {e}"))?;
        if !(0.0..=1.0).contains(&self.max_error_fraction) {
            return Err("flow.max_error_fraction must lie in [0, 1]".into());
        }
        self.budgets.validate()
    }
}

// ---- benchmarks ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBenchPlan {
    #[serde(default = "all_modes")]
    pub modes: Vec<MeshKind>,
    /// Defaults to the longest E2 node profile.
    #[serde(default)]
    pub duration_s: Option<f64>,
}

fn all_modes() -> Vec<MeshKind> {
    vec![MeshKind::NoMesh, MeshKind::Sidecar, MeshKind::NodeProxy, MeshKind::InKernel]
}

impl MeshBenchPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.modes.is_empty() {
            return Err("flow.modes must be non-empty".into());
        }
        if let Some(d) = self.duration_s {
            positive("flow.duration_s", d)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CrudOp {
    Create,
    Update,
    Delete,
}

impl CrudOp {
    pub const ALL: [CrudOp; 3] = [CrudOp::Create, CrudOp::Update, CrudOp::Delete];

    pub fn as_str(self) -> &'static str {
        match self {
            CrudOp::Create => "CREATE",
            CrudOp::Update => "UPDATE",
            CrudOp::Delete => "DELETE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpDurations {
    pub create_s: f64,
    pub update_s: f64,
    pub delete_s: f64,
}

impl OpDurations {
    pub fn get(&self, op: CrudOp) -> f64 {
        match op {
            CrudOp::Create => self.create_s,
            CrudOp::Update => self.update_s,
            CrudOp::Delete => self.delete_s,
        }
    }
}

fn default_base() -> OpDurations {
    OpDurations {
        create_s: 7.3,
        update_s: 20.2,
        delete_s: 10.3,
    }
}

/// Mesh reconfiguration cost added to (or, for lighter data planes,
/// removed from) each operation.
pub fn default_mesh_costs() -> BTreeMap<MeshKind, OpDurations> {
    let c = |create_s, update_s, delete_s| OpDurations {
        create_s,
        update_s,
        delete_s,
    };
    BTreeMap::from([
        (MeshKind::NoMesh, c(0.0, 0.0, 0.0)),
        (MeshKind::NodeProxy, c(-0.4, -0.2, -0.2)),
        (MeshKind::Sidecar, c(0.2, 0.3, 0.3)),
        (MeshKind::InKernel, c(0.3, 0.1, 0.1)),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrudBenchPlan {
    #[serde(default = "all_modes")]
    pub modes: Vec<MeshKind>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_base")]
    pub base: OpDurations,
    #[serde(default = "default_mesh_costs")]
    pub mesh_cost: BTreeMap<MeshKind, OpDurations>,
    /// Half-width of the per-sample jitter as a fraction of the mean.
    #[serde(default = "default_crud_jitter")]
    pub jitter_fraction: f64,
}

fn default_repetitions() -> u32 {
    100
}
fn default_crud_jitter() -> f64 {
    0.02
}

impl CrudBenchPlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.modes.is_empty() {
            return Err("flow.modes must be non-empty".into());
        }
        if self.repetitions == 0 {
            return Err("flow.repetitions must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.jitter_fraction) {
            return Err(format!("flow.jitter_fraction must lie in [0, 1), got {}", self.jitter_fraction));
        }
        for m in &self.modes {
            if !self.mesh_cost.contains_key(m) {
                return Err(format!("flow.mesh_cost has no entry for {m}"));
            }
        }
        for op in CrudOp::ALL {
            positive(&format!("flow.base.{}", op.as_str().to_ascii_lowercase()), self.base.get(op))?;
            for m in &self.modes {
                let v = self.base.get(op) + self.mesh_cost[m].get(op);
                positive(&format!("{} duration under {m}", op.as_str()), v)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canary(step: u32) -> RolloutPlan {
        RolloutPlan {
            host: "kpimon".into(),
            stable_version: "v1".into(),
            candidate_version: "v2".into(),
            step_pct: step,
            steps: None,
            interval_s: 360.0,
            criteria: Criteria::default(),
            rollback_on_failure: true,
        }
    }

    #[test]
    fn uniform_weights_clamp_to_100() {
        assert_eq!(canary(5).weights().len(), 20);
        assert_eq!(canary(30).weights(), vec![30, 60, 90, 100]);
        assert_eq!(canary(100).weights(), vec![100]);
    }

    #[test]
    fn step_bounds() {
        assert!(canary(0).validate().is_err());
        assert!(canary(101).validate().is_err());
        let mut p = canary(5);
        p.steps = Some(vec![10, 25, 50, 75, 100]);
        assert!(p.validate().is_ok());
        assert_eq!(p.weights(), vec![10, 25, 50, 75, 100]);
        p.steps = Some(vec![10, 10, 100]);
        assert!(p.validate().is_err());
        p.steps = Some(vec![10, 50]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn flow_section_forms() {
        let f: FlowPlan = toml::from_str(
            "kind = \"canary\"\nhost = \"kpimon\"\nstable_version = \"v1\"\ncandidate_version = \"v2\"",
        )
        .unwrap();
        assert_eq!(f, FlowPlan::Canary(canary(5)));
        let bad = toml::from_str::<FlowPlan>(
            "kind = \"canary\"\nhost = \"k\"\nstable_version = \"v1\"\ncandidate_version = \"v2\"\nstep = 5",
        );
        assert!(bad.is_err());
    }

    #[test]
    fn default_budgets_sum_to_phase_time() {
        let b = PhaseBudgets::default();
        assert!((b.automated_s() - 5.6).abs() < 1e-12);
    }

    #[test]
    fn ab_window_ordering() {
        let mut p = AbPlan {
            host: "prbctl".into(),
            version_a: "A".into(),
            version_b: "B".into(),
            duration_s: 600.0,
            switchover_s: 300.0,
            actuation_gap_s: 6.0,
            winner_metric: WinnerMetric::MeanLatency,
            bootstrap_resamples: 1000,
            confidence: 0.95,
            split_a: 50,
        };
        assert!(p.validate().is_ok());
        p.switchover_s = 600.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn crud_defaults_validate() {
        let p: CrudBenchPlan = toml::from_str("").unwrap();
        assert!(p.validate().is_ok());
        assert_eq!(p.repetitions, 100);
        assert_eq!(p.base.get(CrudOp::Update), 20.2);
    }
}
