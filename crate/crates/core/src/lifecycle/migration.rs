//! Promotion of one xApp through a chain of E2 environments, gated by
//! approvals between phases.

use serde::Serialize;

use crate::engine::{Attach, Flow, NodeId, World, XAppId, XAppSpec};
use crate::error::{Error, LifecycleError};
use crate::lifecycle::approval::ApprovalSource;
use crate::lifecycle::plan::MigrationPlan;
use crate::lifecycle::run::{PipelineRun, RunState};
use crate::msgplane::{MessageKind, ServiceIdentity};
use crate::sim::{secs_to_nanos, VirtualTime};
use crate::telemetry::Direction;
use crate::workloads::e2::{APP_MANAGER, SUBSCRIPTION_MANAGER};
use crate::workloads::{probe, ProbeResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub gnb_id: String,
    pub namespace: String,
    pub started_at_ns: u64,
    pub completed_at_ns: u64,
    pub automated_s: f64,
    pub indications_delivered: u64,
    pub approved: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MigrationReport {
    pub state: RunState,
    pub phases: Vec<PhaseReport>,
    pub total_automated_ns: u64,
    pub total_automated_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MigrationTimer {
    Deploy,
    Deployed,
    Registered,
    Subscribed,
    Verified,
    Persisted,
}

struct Active {
    phase: usize,
    node: NodeId,
    xapp: Option<XAppId>,
    started_at: VirtualTime,
    verify_from: VirtualTime,
}

pub struct MigrationFlow {
    plan: MigrationPlan,
    run: PipelineRun,
    approvals: Box<dyn ApprovalSource>,
    active: Option<Active>,
    phases: Vec<PhaseReport>,
    error: Option<LifecycleError>,
    done: bool,
}

impl MigrationFlow {
    pub fn new(run_id: &str, plan: MigrationPlan, approvals: Box<dyn ApprovalSource>) -> Self {
        MigrationFlow {
            plan,
            run: PipelineRun::new(run_id, "migrate"),
            approvals,
            active: None,
            phases: Vec::new(),
            error: None,
            done: false,
        }
    }

    pub fn run(&self) -> &PipelineRun {
        &self.run
    }

    pub fn error(&self) -> Option<&LifecycleError> {
        self.error.as_ref()
    }

    pub fn prompts(&self) -> usize {
        self.approvals.prompts()
    }

    pub fn report(&self) -> MigrationReport {
        let total_ns: u64 = self.phases.iter().map(|p| p.completed_at_ns - p.started_at_ns).sum();
        MigrationReport {
            state: self.run.state(),
            phases: self.phases.clone(),
            total_automated_ns: total_ns,
            total_automated_s: total_ns as f64 / 1e9,
            error: self.error.as_ref().map(ToString::to_string),
        }
    }

    fn namespace(&self, gnb_id: &str) -> String {
        format!("{}-{}", self.plan.xapp.namespace, gnb_id)
    }

    fn identity(&self, gnb_id: &str) -> ServiceIdentity {
        let x = &self.plan.xapp;
        ServiceIdentity::new(&x.name, &x.version, &self.namespace(gnb_id))
    }

    fn after(&self, world: &mut World<MigrationTimer>, secs: f64, t: MigrationTimer) {
        world.schedule_flow_in(secs_to_nanos(secs), t);
    }

    fn teardown(&mut self, world: &mut World<MigrationTimer>) -> Result<(), Error> {
        if let Some(a) = self.active.take() {
            world.disconnect_node(a.node);
            if let Some(id) = a.xapp {
                if world.undeployed_at(id).is_none() {
                    world.undeploy(id)?;
                }
                self.run.note(world.now(), "teardown", world.xapp(id).identity().to_string());
            }
        }
        Ok(())
    }

    fn fail(&mut self, world: &mut World<MigrationTimer>, err: LifecycleError) -> Result<(), Error> {
        self.teardown(world)?;
        self.run.transition(RunState::Failed, world.now(), err.to_string())?;
        self.error = Some(err);
        self.done = true;
        Ok(())
    }

    fn start_phase(&mut self, world: &mut World<MigrationTimer>, phase: usize) -> Result<(), Error> {
        let now = world.now();
        let spec = self.plan.phases[phase].clone();
        let node = world.node_id(&spec.gnb_id).expect("checked at start");
        self.run.note(now, "phase_start", format!("phase={} gnb_id={}", phase + 1, spec.gnb_id));
        self.active = Some(Active {
            phase,
            node,
            xapp: None,
            started_at: now,
            verify_from: now,
        });
        match world.e2mgr.validate_plmn(&spec.gnb_id, spec.plmn.as_deref()) {
            Ok(true) => {
                let plmn = world.e2mgr.plmn_of(&spec.gnb_id).unwrap_or_default().to_string();
                self.run.note(now, "plmn_validated", format!("gnb_id={} plmn={plmn}", spec.gnb_id));
            }
            Ok(false) => {
                return self.fail(
                    world,
                    LifecycleError::InvalidPlan(format!(
                        "gNB {} advertises PLMN {:?}, expected {:?}",
                        spec.gnb_id,
                        world.e2mgr.plmn_of(&spec.gnb_id),
                        spec.plmn
                    )),
                )
            }
            Err(e) => return self.fail(world, e),
        }
        self.after(world, self.plan.budgets.plmn_s, MigrationTimer::Deploy);
        Ok(())
    }

    fn phase_timeout(&self) -> LifecycleError {
        let a = self.active.as_ref().expect("active phase");
        LifecycleError::PhaseTimeout {
            phase: a.phase + 1,
            gnb_id: self.plan.phases[a.phase].gnb_id.clone(),
            budget_s: self.plan.budgets.automated_s(),
        }
    }
}

impl Flow for MigrationFlow {
    type Timer = MigrationTimer;

    fn start(&mut self, world: &mut World<MigrationTimer>) -> Result<(), Error> {
        let now = world.now();
        let gnbs: Vec<&str> = self.plan.phases.iter().map(|p| p.gnb_id.as_str()).collect();
        self.run.transition(
            RunState::Running,
            now,
            format!("xapp={} phases={gnbs:?}", self.plan.xapp.name),
        )?;
        let unknown = self
            .plan
            .phases
            .iter()
            .find(|p| !world.e2mgr.knows(&p.gnb_id) || world.node_id(&p.gnb_id).is_none())
            .map(|p| p.gnb_id.clone());
        if let Some(g) = unknown {
            return self.fail(world, LifecycleError::UnknownGnb(g));
        }
        self.start_phase(world, 0)
    }

    fn on_timer(&mut self, world: &mut World<MigrationTimer>, timer: MigrationTimer) -> Result<(), Error> {
        if self.done {
            return Ok(());
        }
        let now = world.now();
        let phase = self.active.as_ref().expect("active phase").phase;
        let gnb_id = self.plan.phases[phase].gnb_id.clone();
        let b = self.plan.budgets.clone();
        match timer {
            MigrationTimer::Deploy => {
                let identity = self.identity(&gnb_id);
                let host = world.node_profile(self.active.as_ref().unwrap().node).host.clone();
                let mut spec = XAppSpec::new(identity.clone(), self.plan.xapp.params.clone());
                spec.params.startup_s = b.deploy_s;
                spec.params.teardown_s = b.teardown_s;
                spec.subscriptions[0].host = host;
                spec.attach = Attach::Manual;
                let id = world.deploy(spec)?;
                self.active.as_mut().unwrap().xapp = Some(id);
                self.run.note(now, "deploy", identity.to_string());
                self.after(world, b.deploy_s, MigrationTimer::Deployed);
            }
            MigrationTimer::Deployed => {
                let id = self.active.as_ref().unwrap().xapp.unwrap();
                if !world.xapp(id).state().serving() {
                    let e = self.phase_timeout();
                    return self.fail(world, e);
                }
                let identity = world.xapp(id).identity().clone();
                world.send_platform(MessageKind::Registration, &identity, APP_MANAGER);
                world.register(id)?;
                self.run.note(now, "register", identity.to_string());
                self.after(world, b.registration_s, MigrationTimer::Registered);
            }
            MigrationTimer::Registered => {
                let a = self.active.as_ref().unwrap();
                let (id, node) = (a.xapp.unwrap(), a.node);
                let identity = world.xapp(id).identity().clone();
                world.send_platform(MessageKind::SubscriptionReq, &identity, SUBSCRIPTION_MANAGER);
                world.subscribe(id)?;
                world.connect_node(node);
                self.run.note(now, "subscribe", format!("{identity} gnb_id={gnb_id}"));
                self.after(world, b.subscription_s, MigrationTimer::Subscribed);
            }
            MigrationTimer::Subscribed => {
                self.active.as_mut().unwrap().verify_from = now;
                self.after(world, b.verify_s, MigrationTimer::Verified);
            }
            MigrationTimer::Verified => {
                let a = self.active.as_ref().unwrap();
                let id = a.xapp.unwrap();
                let identity = world.xapp(id).identity().clone();
                let fraction = world.telemetry.error_fraction(&identity, a.verify_from, now);
                let result = probe(world.xapp(id).state(), fraction, self.plan.max_error_fraction);
                self.run.note(now, "health_probe", format!("{result:?} error_fraction={fraction:.6}"));
                if result == ProbeResult::Fail {
                    let e = self.phase_timeout();
                    return self.fail(world, e);
                }
                self.after(world, b.persist_s, MigrationTimer::Persisted);
            }
            MigrationTimer::Persisted => {
                let a = self.active.as_ref().unwrap();
                let id = a.xapp.unwrap();
                let identity = world.xapp(id).identity().clone();
                let delivered = world
                    .telemetry
                    .aggregate(&identity, Direction::Ingress, a.started_at, VirtualTime::MAX)
                    .delivered;
                let automated_ns = now.saturating_sub(a.started_at);
                self.phases.push(PhaseReport {
                    phase: phase + 1,
                    gnb_id: gnb_id.clone(),
                    namespace: self.namespace(&gnb_id),
                    started_at_ns: a.started_at.as_nanos(),
                    completed_at_ns: now.as_nanos(),
                    automated_s: automated_ns as f64 / 1e9,
                    indications_delivered: delivered,
                    approved: None,
                });
                self.run.note(now, "persist", format!("phase={} automated_ns={automated_ns}", phase + 1));
                self.run
                    .transition(RunState::AwaitingApproval, now, format!("phase {}", phase + 1))?;
                let approved = self.approvals.approve(phase + 1);
                self.phases.last_mut().unwrap().approved = Some(approved);
                if !approved {
                    self.teardown(world)?;
                    self.done = true;
                    let e = LifecycleError::ApprovalRejected(phase + 1);
                    self.run.transition(RunState::Failed, now, e.to_string())?;
                    self.error = Some(e);
                    return Ok(());
                }
                self.run.transition(RunState::Running, now, format!("phase {} approved", phase + 1))?;
                if phase + 1 < self.plan.phases.len() {
                    self.teardown(world)?;
                    self.start_phase(world, phase + 1)?;
                } else {
                    self.run.transition(RunState::Succeeded, now, "all phases promoted")?;
                    self.done = true;
                }
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
