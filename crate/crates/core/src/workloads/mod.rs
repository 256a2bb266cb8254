//! Traffic sources, RIC platform stubs and the xApp service model.

pub mod e2;
pub mod health;
pub mod traffic;
pub mod xapp;

pub use e2::{platform_identity, E2Manager, E2NodeKind, E2NodeProfile};
pub use health::{probe, HealthProbe, ProbeKind, ProbeResult, ProbeTracker};
pub use traffic::{ArrivalSchedule, Segment, TrafficProfile};
pub use xapp::{ControlLoop, Ingest, XAppCounters, XAppInstance, XAppParams, XAppState};
