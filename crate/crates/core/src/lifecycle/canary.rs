//! Progressive canary rollout with criteria-driven rollback.

use serde::Serialize;

use crate::engine::{Flow, World, XAppId, XAppSpec};
use crate::error::{Error, LifecycleError};
use crate::lifecycle::plan::RolloutPlan;
use crate::lifecycle::run::{PipelineRun, RunState};
use crate::lifecycle::Catalog;
use crate::mesh::RouteSplitPolicy;
use crate::msgplane::ServiceIdentity;
use crate::sim::{secs_to_nanos, VirtualTime};
use crate::telemetry::Direction;
use crate::workloads::XAppState;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppliedSplit {
    pub applied_at_ns: u64,
    pub effective_at_ns: u64,
    pub stable_weight: u32,
    pub candidate_weight: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowVerdict {
    pub from_ns: u64,
    pub to_ns: u64,
    pub candidate_weight: u32,
    pub delivered: u64,
    pub dropped_by_queue: u64,
    pub error_fraction: f64,
    pub mean_latency_ms: f64,
    pub healthy: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CanaryReport {
    pub state: RunState,
    pub applied: Vec<AppliedSplit>,
    pub windows: Vec<WindowVerdict>,
    /// When the candidate started receiving 100% of traffic.
    pub migration_complete_at_s: Option<f64>,
    pub rolled_back_at_s: Option<f64>,
    pub finished_at_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanaryTimer {
    Shift,
    Finish,
    Settled,
}

pub struct CanaryFlow {
    plan: RolloutPlan,
    run: PipelineRun,
    catalog: Catalog,
    weights: Vec<u32>,
    step: usize,
    pre_split: Option<RouteSplitPolicy>,
    stable: Option<XAppId>,
    candidate: Option<XAppId>,
    applied: Vec<AppliedSplit>,
    windows: Vec<WindowVerdict>,
    complete_at: Option<VirtualTime>,
    rolled_back_at: Option<VirtualTime>,
    finished_at: Option<VirtualTime>,
    done: bool,
}

impl CanaryFlow {
    pub fn new(run_id: &str, plan: RolloutPlan, catalog: Catalog) -> Self {
        let weights = plan.weights();
        CanaryFlow {
            plan,
            run: PipelineRun::new(run_id, "canary"),
            catalog,
            weights,
            step: 0,
            pre_split: None,
            stable: None,
            candidate: None,
            applied: Vec::new(),
            windows: Vec::new(),
            complete_at: None,
            rolled_back_at: None,
            finished_at: None,
            done: false,
        }
    }

    pub fn run(&self) -> &PipelineRun {
        &self.run
    }

    pub fn report(&self) -> CanaryReport {
        CanaryReport {
            state: self.run.state(),
            applied: self.applied.clone(),
            windows: self.windows.clone(),
            migration_complete_at_s: self.complete_at.map(VirtualTime::as_secs_f64),
            rolled_back_at_s: self.rolled_back_at.map(VirtualTime::as_secs_f64),
            finished_at_s: self.finished_at.map(VirtualTime::as_secs_f64),
        }
    }

    fn interval_ns(&self) -> u64 {
        secs_to_nanos(self.plan.interval_s)
    }

    fn fail(&mut self, world: &World<CanaryTimer>, detail: String) -> Result<(), Error> {
        self.run.transition(RunState::Failed, world.now(), detail)?;
        self.done = true;
        self.finished_at = Some(world.now());
        Ok(())
    }

    fn apply(&mut self, world: &mut World<CanaryTimer>, candidate_weight: u32) -> Result<VirtualTime, Error> {
        let p = &self.plan;
        let policy = RouteSplitPolicy::new(
            p.host.as_str(),
            &[(&p.stable_version, 100 - candidate_weight), (&p.candidate_version, candidate_weight)],
        );
        let now = world.now();
        let at = world.apply_route_split(policy)?;
        self.applied.push(AppliedSplit {
            applied_at_ns: now.as_nanos(),
            effective_at_ns: at.as_nanos(),
            stable_weight: 100 - candidate_weight,
            candidate_weight,
        });
        self.run.note(
            now,
            "route_split",
            format!(
                "{}={},{}={} effective_at_ns={}",
                p.stable_version,
                100 - candidate_weight,
                p.candidate_version,
                candidate_weight,
                at.as_nanos()
            ),
        );
        Ok(at)
    }

    fn candidate_identity(&self, world: &World<CanaryTimer>) -> Option<ServiceIdentity> {
        self.candidate.map(|id| world.xapp(id).identity().clone())
    }

    /// Criteria over the window that just ended.
    fn evaluate(&mut self, world: &World<CanaryTimer>) -> bool {
        let to = world.now();
        let from = VirtualTime::from_nanos(to.as_nanos().saturating_sub(self.interval_ns()));
        let weight = self.weights[self.step - 1];
        let Some(identity) = self.candidate_identity(world) else {
            return false;
        };
        let s = world.telemetry.aggregate(&identity, Direction::Ingress, from, to);
        let error_fraction = s.error_fraction();
        let mean_latency_ms = s.latency.mean_ns_f64() / 1e6;
        let healthy = world.xapp(self.candidate.unwrap()).state() != XAppState::Failed;
        let c = &self.plan.criteria;
        let pass = !c.enabled
            || (healthy && error_fraction <= c.max_error_fraction && mean_latency_ms <= c.max_mean_latency_ms);
        let within = healthy && error_fraction <= c.max_error_fraction && mean_latency_ms <= c.max_mean_latency_ms;
        self.windows.push(WindowVerdict {
            from_ns: from.as_nanos(),
            to_ns: to.as_nanos(),
            candidate_weight: weight,
            delivered: s.delivered,
            dropped_by_queue: s.dropped_by_queue,
            error_fraction,
            mean_latency_ms,
            healthy,
            pass,
        });
        let detail = format!(
            "weight={weight} delivered={} dropped={} error_fraction={error_fraction:.6} mean_latency_ms={mean_latency_ms:.3} healthy={healthy}",
            s.delivered, s.dropped_by_queue
        );
        let step = if within { "criteria_pass" } else { "criteria_violation" };
        self.run.note(to, step, detail);
        pass
    }

    /// Restores the pre-run split and removes the candidate.
    pub fn rollback(&mut self, world: &mut World<CanaryTimer>) -> Result<VirtualTime, Error> {
        let (Some(cand), RunState::Running) = (self.candidate, self.run.state()) else {
            return Err(LifecycleError::NotRollbackable(self.run.run_id().to_string()).into());
        };
        if world.undeployed_at(cand).is_some() {
            return Err(LifecycleError::NotRollbackable(self.run.run_id().to_string()).into());
        }
        let pre = self.pre_split.clone().expect("set at start");
        let at = world.apply_route_split(pre)?;
        world.undeploy(cand)?;
        let now = world.now();
        self.rolled_back_at = Some(now);
        self.run.transition(
            RunState::RolledBack,
            now,
            format!("restored pre-run split effective_at_ns={}; candidate undeployed", at.as_nanos()),
        )?;
        Ok(at)
    }

    fn on_failed_window(&mut self, world: &mut World<CanaryTimer>) -> Result<bool, Error> {
        if !self.plan.rollback_on_failure {
            return Ok(false);
        }
        let at = self.rollback(world)?;
        world.schedule_flow(at, CanaryTimer::Settled)?;
        Ok(true)
    }
}

fn find_or_deploy(world: &mut World<CanaryTimer>, catalog: &Catalog, host: &str, version: &str) -> Result<Option<XAppId>, Error> {
    if let Some(id) = world.find_version(host, version) {
        return Ok(Some(id));
    }
    match catalog.find(host, version) {
        Some(spec) => Ok(Some(world.deploy(XAppSpec::clone(spec))?)),
        None => Ok(None),
    }
}

impl Flow for CanaryFlow {
    type Timer = CanaryTimer;

    fn start(&mut self, world: &mut World<CanaryTimer>) -> Result<(), Error> {
        let now = world.now();
        self.run.transition(
            RunState::Running,
            now,
            format!(
                "host={} stable={} candidate={} steps={:?} interval_s={}",
                self.plan.host, self.plan.stable_version, self.plan.candidate_version, self.weights, self.plan.interval_s
            ),
        )?;
        let host = self.plan.host.clone();
        self.stable = world.find_version(&host, &self.plan.stable_version);
        if self.stable.is_none() {
            return self.fail(world, format!("stable version {} is not deployed", self.plan.stable_version));
        }
        self.pre_split = Some(
            world
                .mesh
                .effective_route(&host)
                .cloned()
                .unwrap_or_else(|| RouteSplitPolicy::new(host.as_str(), &[(&self.plan.stable_version, 100)])),
        );
        let cand_version = self.plan.candidate_version.clone();
        self.candidate = find_or_deploy(world, &self.catalog, &host, &cand_version)?;
        let Some(cand) = self.candidate else {
            return self.fail(world, format!("no xapp entry for candidate {host}:{cand_version}"));
        };
        let identity = world.xapp(cand).identity().clone();
        self.run.note(now, "deploy_candidate", identity.to_string());
        self.apply(world, 0)?;
        world.schedule_flow(now.saturating_add(self.interval_ns()), CanaryTimer::Shift)?;
        Ok(())
    }

    fn on_timer(&mut self, world: &mut World<CanaryTimer>, timer: CanaryTimer) -> Result<(), Error> {
        let now = world.now();
        match timer {
            CanaryTimer::Shift => {
                if self.step > 0 && !self.evaluate(world) && self.on_failed_window(world)? {
                    return Ok(());
                }
                let w = self.weights[self.step];
                let at = self.apply(world, w)?;
                self.step += 1;
                if w == 100 {
                    self.complete_at = Some(at);
                }
                let next = if self.step < self.weights.len() {
                    CanaryTimer::Shift
                } else {
                    CanaryTimer::Finish
                };
                world.schedule_flow(now.saturating_add(self.interval_ns()), next)?;
            }
            CanaryTimer::Finish => {
                if !self.evaluate(world) && self.on_failed_window(world)? {
                    return Ok(());
                }
                let stable = self.stable.expect("checked at start");
                world.undeploy(stable)?;
                self.run.note(now, "undeploy_stable", world.xapp(stable).identity().to_string());
                self.run.transition(RunState::Succeeded, now, "candidate holds 100%")?;
                self.finished_at = Some(now);
                self.done = true;
            }
            CanaryTimer::Settled => {
                self.run.note(now, "rollback_settled", "pre-run split in effect");
                self.finished_at = Some(now);
                self.done = true;
            }
        }
        Ok(())
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
