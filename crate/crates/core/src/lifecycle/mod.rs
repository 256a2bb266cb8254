//! Pipeline controller: templates, run state machine and the flows that
//! drive the simulated RIC.

pub mod ab;
pub mod approval;
pub mod canary;
pub mod crud;
pub mod migration;
pub mod plan;
pub mod run;
pub mod template;

use crate::engine::XAppSpec;

pub use ab::{AbFlow, AbReport, AbVerdict, Variant};
pub use approval::{ApprovalSource, AutoApprove, InteractiveApprovals, ScriptedApprovals};
pub use canary::{CanaryFlow, CanaryReport};
pub use crud::{run_crud_bench, CrudTable};
pub use migration::{MigrationFlow, MigrationReport};
pub use plan::FlowPlan;
pub use run::{PipelineRun, RunEvent, RunState};
pub use template::PipelineTemplate;

/// xApp definitions a flow may deploy on demand.
#[derive(Clone, Debug, Default)]
pub struct Catalog(pub Vec<XAppSpec>);

impl Catalog {
    pub fn find(&self, host: &str, version: &str) -> Option<&XAppSpec> {
        self.0
            .iter()
            .find(|s| &*s.identity.name == host && &*s.identity.version == version)
    }
}
