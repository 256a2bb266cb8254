use std::path::PathBuf;

use thiserror::Error;

use crate::sim::VirtualTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock is already at {now}")]
    SchedulingInPast { at: VirtualTime, now: VirtualTime },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlaneError {
    #[error("service {0} is already registered")]
    DuplicateRegistration(String),
    #[error("service {0} is not registered")]
    UnknownService(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeshError {
    #[error("invalid route weights for host {host}: {reason}")]
    InvalidWeights { host: String, reason: String },
    #[error("version {version} is unknown under host {host}")]
    UnknownVersion { host: String, version: String },
    #[error("no eligible version for host {0}: every subset is ejected")]
    NoEligibleVersion(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LifecycleError {
    #[error("template {template}: placeholder `{key}` has no binding and no default")]
    MissingBinding { template: String, key: String },
    #[error("template {template}: placeholder `{key}` expects {expected}, got {got}")]
    TypeMismatch {
        template: String,
        key: String,
        expected: String,
        got: String,
    },
    #[error("phase {phase} ({gnb_id}) did not become healthy within {budget_s} s")]
    PhaseTimeout {
        phase: usize,
        gnb_id: String,
        budget_s: f64,
    },
    #[error("approval rejected at phase {0}")]
    ApprovalRejected(usize),
    #[error("unknown gNB `{0}`")]
    UnknownGnb(String),
    #[error("run {0} has no active candidate to roll back")]
    NotRollbackable(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("illegal run transition {from} -> {to}")]
    IllegalTransition { from: String, to: String },
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("override `{0}` is not of the form a.b.c=value")]
    BadOverride(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serializing {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
