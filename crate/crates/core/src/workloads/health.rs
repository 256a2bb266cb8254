use serde::{Deserialize, Serialize};

use crate::workloads::xapp::XAppState;

pub const DEFAULT_MAX_ERROR_FRACTION: f64 = 0.01;
pub const DEFAULT_MAX_MEAN_LATENCY_MS: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeKind {
    Liveness,
    Readiness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthProbe {
    pub period_s: f64,
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: u32,
    #[serde(default = "default_kind")]
    pub kind: ProbeKind,
    #[serde(default = "default_max_error_fraction")]
    pub max_error_fraction: f64,
}

fn default_failure_threshold() -> u32 {
    3
}
fn default_kind() -> ProbeKind {
    ProbeKind::Readiness
}
fn default_max_error_fraction() -> f64 {
    DEFAULT_MAX_ERROR_FRACTION
}

impl HealthProbe {
    pub fn new(period_s: f64, failure_threshold: u32) -> Self {
        HealthProbe {
            period_s,
            failure_threshold,
            kind: ProbeKind::Readiness,
            max_error_fraction: DEFAULT_MAX_ERROR_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.period_s.is_finite() && self.period_s > 0.0) {
            return Err(format!("probe period_s must be positive, got {}", self.period_s));
        }
        if self.failure_threshold == 0 {
            return Err("probe failure_threshold must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.max_error_fraction) {
            return Err(format!("probe max_error_fraction must lie in [0, 1], got {}", self.max_error_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeResult {
    Pass,
    Fail,
}

/// Passes when the instance is serving and its windowed queue-drop
/// fraction is within `max_error_fraction`.
pub fn probe(state: XAppState, window_error_fraction: f64, max_error_fraction: f64) -> ProbeResult {
    if state.serving() && window_error_fraction <= max_error_fraction {
        ProbeResult::Pass
    } else {
        ProbeResult::Fail
    }
}

/// Consecutive-failure counter for one probe.
#[derive(Clone, Debug, Default)]
pub struct ProbeTracker {
    consecutive_failures: u32,
}

impl ProbeTracker {
    /// Returns true exactly when the failure threshold is reached.
    pub fn observe(&mut self, result: ProbeResult, threshold: u32) -> bool {
        match result {
            ProbeResult::Pass => {
                self.consecutive_failures = 0;
                false
            }
            ProbeResult::Fail => {
                self.consecutive_failures += 1;
                self.consecutive_failures == threshold
            }
        }
    }

    pub fn consecutive_failures(&self) -> u32 {
        self.consecutive_failures
    }
}
