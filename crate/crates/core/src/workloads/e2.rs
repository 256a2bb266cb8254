//! E2 nodes and the RIC platform stubs they talk to.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::LifecycleError;
use crate::msgplane::{ServiceIdentity, DEFAULT_PAYLOAD_BYTES};
use crate::workloads::traffic::TrafficProfile;

pub const PLATFORM_NAMESPACE: &str = "ricplt";
pub const APP_MANAGER: &str = "appmgr";
pub const SUBSCRIPTION_MANAGER: &str = "submgr";
pub const E2_MANAGER: &str = "e2mgr";

pub fn platform_identity(name: &str) -> ServiceIdentity {
    ServiceIdentity::new(name, "v1", PLATFORM_NAMESPACE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum E2NodeKind {
    Simulated,
    Emulated,
    /// Same behavior as `Emulated`; only the label differs.
    RealStub,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E2NodeProfile {
    pub gnb_id: String,
    #[serde(default = "default_kind")]
    pub kind: E2NodeKind,
    #[serde(default = "default_plmn")]
    pub plmn: String,
    pub profile: TrafficProfile,
    /// Logical host the indications are addressed to.
    pub host: String,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "default_payload")]
    pub payload_bytes: u32,
    /// Nodes that start disconnected emit only once a flow connects them.
    #[serde(default = "default_true")]
    pub connected: bool,
}

fn default_kind() -> E2NodeKind {
    E2NodeKind::Simulated
}
fn default_plmn() -> String {
    "00101".into()
}
fn default_payload() -> u32 {
    DEFAULT_PAYLOAD_BYTES
}
fn default_true() -> bool {
    true
}

impl E2NodeProfile {
    pub fn identity(&self) -> ServiceIdentity {
        ServiceIdentity::new(&self.gnb_id, "e2", "ran")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.gnb_id.is_empty() {
            return Err("gnb_id must be non-empty".into());
        }
        if self.host.is_empty() {
            return Err(format!("e2 node {}: host must be non-empty", self.gnb_id));
        }
        if self.payload_bytes == 0 {
            return Err(format!("e2 node {}: payload_bytes must be positive", self.gnb_id));
        }
        if !(self.start_s.is_finite() && self.start_s >= 0.0) {
            return Err(format!("e2 node {}: start_s must be non-negative", self.gnb_id));
        }
        self.profile.validate().map_err(|e| format!("e2 node {}: {e}", self.gnb_id))
    }
}

/// Node registry kept by the E2 manager stub.
#[derive(Clone, Debug, Default)]
pub struct E2Manager {
    nodes: BTreeMap<String, String>,
}

impl E2Manager {
    pub fn register(&mut self, gnb_id: &str, plmn: &str) {
        self.nodes.insert(gnb_id.to_string(), plmn.to_string());
    }

    pub fn knows(&self, gnb_id: &str) -> bool {
        self.nodes.contains_key(gnb_id)
    }

    pub fn plmn_of(&self, gnb_id: &str) -> Option<&str> {
        self.nodes.get(gnb_id).map(String::as_str)
    }

    /// True when the node exists and advertises `expected` (any non-empty
    /// PLMN when nothing is expected).
    pub fn validate_plmn(&self, gnb_id: &str, expected: Option<&str>) -> Result<bool, LifecycleError> {
        let plmn = self
            .plmn_of(gnb_id)
            .ok_or_else(|| LifecycleError::UnknownGnb(gnb_id.to_string()))?;
        Ok(match expected {
            Some(e) => plmn == e,
            None => !plmn.is_empty(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plmn_validation() {
        let mut m = E2Manager::default();
        m.register("gnb-sim", "00101");
        assert_eq!(m.validate_plmn("gnb-sim", Some("00101")), Ok(true));
        assert_eq!(m.validate_plmn("gnb-sim", Some("99999")), Ok(false));
        assert_eq!(m.validate_plmn("gnb-sim", None), Ok(true));
        assert_eq!(
            m.validate_plmn("gnb-x", None),
            Err(LifecycleError::UnknownGnb("gnb-x".into()))
        );
    }

    #[test]
    fn profile_from_config() {
        let p: E2NodeProfile = toml::from_str(
            r#"
            gnb_id = "gnb-1"
            kind = "REAL_STUB"
            host = "kpimon"
            profile = { kind = "constant", rate = 100.0 }
            "#,
        )
        .unwrap();
        assert_eq!(p.kind, E2NodeKind::RealStub);
        assert_eq!(p.payload_bytes, 256);
        assert!(p.connected);
        assert!(p.validate().is_ok());
    }
}
