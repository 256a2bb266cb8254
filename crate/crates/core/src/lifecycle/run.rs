//! Pipeline run state machine and its append-only event log.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ExportError, LifecycleError};
use crate::sim::VirtualTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunState {
    Pending,
    Running,
    AwaitingApproval,
    Succeeded,
    RolledBack,
    Failed,
}

impl RunState {
    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Pending => "PENDING",
            RunState::Running => "RUNNING",
            RunState::AwaitingApproval => "AWAITING_APPROVAL",
            RunState::Succeeded => "SUCCEEDED",
            RunState::RolledBack => "ROLLED_BACK",
            RunState::Failed => "FAILED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Succeeded | RunState::RolledBack | RunState::Failed)
    }

    fn allows(self, to: RunState) -> bool {
        use RunState::*;
        matches!(
            (self, to),
            (Pending, Running)
                | (Pending, Failed)
                | (Running, AwaitingApproval)
                | (AwaitingApproval, Running)
                | (AwaitingApproval, Failed)
                | (Running, Succeeded)
                | (Running, RolledBack)
                | (Running, Failed)
        )
    }

    /// CLI exit code for a finished run.
    pub fn exit_code(self) -> i32 {
        match self {
            RunState::Succeeded => 0,
            RunState::RolledBack => 2,
            RunState::Failed => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEvent {
    pub time_ns: u64,
    pub run_id: String,
    /// `FROM->TO` for state changes, a step name otherwise.
    pub transition: String,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    run_id: String,
    plan: String,
    state: RunState,
    events: Vec<RunEvent>,
}

impl PipelineRun {
    pub fn new(run_id: &str, plan: &str) -> Self {
        PipelineRun {
            run_id: run_id.to_string(),
            plan: plan.to_string(),
            state: RunState::Pending,
            events: Vec::new(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn plan(&self) -> &str {
        &self.plan
    }

    pub fn state(&self) -> RunState {
        self.state
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn transition(&mut self, to: RunState, at: VirtualTime, detail: impl Into<String>) -> Result<(), LifecycleError> {
        if !self.state.allows(to) {
            return Err(LifecycleError::IllegalTransition {
                from: self.state.to_string(),
                to: to.to_string(),
            });
        }
        let transition = format!("{}->{}", self.state, to);
        self.state = to;
        self.push(at, transition, detail.into());
        Ok(())
    }

    /// Logs a step without changing state.
    pub fn note(&mut self, at: VirtualTime, step: &str, detail: impl Into<String>) {
        self.push(at, step.to_string(), detail.into());
    }

    fn push(&mut self, at: VirtualTime, transition: String, detail: String) {
        debug_assert!(self.events.last().is_none_or(|e| e.time_ns <= at.as_nanos()));
        self.events.push(RunEvent {
            time_ns: at.as_nanos(),
            run_id: self.run_id.clone(),
            transition,
            detail,
        });
    }

    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_events(&self, path: &Path) -> Result<(), ExportError> {
        let io = |source| ExportError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.events_jsonl()).map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn happy_path_with_approvals() {
        let mut r = PipelineRun::new("r1", "migrate");
        let t = VirtualTime::from_secs;
        r.transition(RunState::Running, t(0), "start").unwrap();
        r.transition(RunState::AwaitingApproval, t(1), "phase 1").unwrap();
        r.transition(RunState::Running, t(1), "approved").unwrap();
        r.note(t(2), "deploy", "x");
        r.transition(RunState::Succeeded, t(3), "").unwrap();
        assert_eq!(r.events().len(), 5);
        assert_eq!(r.events()[0].transition, "PENDING->RUNNING");
        assert_eq!(r.state().exit_code(), 0);
    }

    #[test]
    fn terminal_states_are_final() {
        let mut r = PipelineRun::new("r1", "canary");
        r.transition(RunState::Running, VirtualTime::ZERO, "").unwrap();
        r.transition(RunState::RolledBack, VirtualTime::ZERO, "").unwrap();
        assert!(r.transition(RunState::Running, VirtualTime::ZERO, "").is_err());
        assert!(r.transition(RunState::Succeeded, VirtualTime::ZERO, "").is_err());
    }

    #[test]
    fn skipping_running_is_illegal() {
        let mut r = PipelineRun::new("r1", "ab");
        assert!(r.transition(RunState::Succeeded, VirtualTime::ZERO, "").is_err());
        assert!(r.transition(RunState::AwaitingApproval, VirtualTime::ZERO, "").is_err());
    }

    #[test]
    fn jsonl_fields() {
        let mut r = PipelineRun::new("run-7", "canary");
        r.transition(RunState::Running, VirtualTime::from_millis(1500), "go").unwrap();
        let line = r.events_jsonl();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["time_ns"], 1_500_000_000u64);
        assert_eq!(v["run_id"], "run-7");
        assert_eq!(v["transition"], "PENDING->RUNNING");
        assert_eq!(v["detail"], "go");
    }
}
