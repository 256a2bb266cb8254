//! Builds a simulated RIC from a scenario config, runs its flow, and writes
//! the exports. The CLI is a thin layer over this module.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::engine::{run_flow, Flow, HorizonFlow, RunEnd, World, WorldSetup};
use crate::error::{ConfigError, Error, ExportError};
use crate::lifecycle::ab::AbTimer;
use crate::lifecycle::canary::CanaryTimer;
use crate::lifecycle::migration::MigrationTimer;
use crate::lifecycle::{
    run_crud_bench, AbFlow, ApprovalSource, AutoApprove, CanaryFlow, Catalog, CrudTable, FlowPlan, InteractiveApprovals,
    MigrationFlow, PipelineRun, RunState, ScriptedApprovals,
};
use crate::mesh::{MeshKind, PropagationConfig};
use crate::sim::{secs_to_nanos, Pacer, VirtualTime};
use crate::telemetry::{self, Telemetry};

/// Where migration approvals come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum ApprovalChoice {
    #[default]
    Auto,
    Interactive,
    Answers(Vec<bool>),
}

impl ApprovalChoice {
    /// `auto`, `interactive` or `file:<path>`.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "auto" => Ok(ApprovalChoice::Auto),
            "interactive" => Ok(ApprovalChoice::Interactive),
            _ => {
                let path = s.strip_prefix("file:").ok_or_else(|| ConfigError::Invalid {
                    path: "--approve".into(),
                    message: format!("expected auto, interactive or file:<path>, got `{s}`"),
                })?;
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: PathBuf::from(path),
                    source,
                })?;
                let scripted = ScriptedApprovals::parse(&text).map_err(|message| ConfigError::Invalid {
                    path: path.to_string(),
                    message,
                })?;
                Ok(ApprovalChoice::Answers(scripted.remaining()))
            }
        }
    }

    pub fn source(&self) -> Box<dyn ApprovalSource> {
        match self {
            ApprovalChoice::Auto => Box::new(AutoApprove),
            ApprovalChoice::Interactive => Box::new(InteractiveApprovals::new(
                std::io::stdin().lock(),
                std::io::stderr(),
            )),
            ApprovalChoice::Answers(a) => Box::new(ScriptedApprovals::new(a.clone())),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: u64,
    pub run_id: Option<String>,
    /// Wall-clock pacing factor (virtual seconds per wall second).
    pub pace: Option<f64>,
    pub trace: Option<bool>,
    /// Overrides the plan's approval mode.
    pub approvals: Option<ApprovalChoice>,
}

impl RunOptions {
    pub fn with_seed(seed: u64) -> Self {
        RunOptions {
            seed,
            ..RunOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshBenchRow {
    pub mode: MeshKind,
    pub messages: u64,
    pub mean_added_latency_ns: f64,
    pub min_added_latency_ns: u64,
    pub max_added_latency_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeshBenchReport {
    pub rows: Vec<MeshBenchRow>,
    /// Named ratios of mean added latency, e.g. `SIDECAR/NODE_PROXY`.
    pub ratios: BTreeMap<String, f64>,
}

impl MeshBenchReport {
    pub fn row(&self, mode: MeshKind) -> Option<&MeshBenchRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

pub enum Outcome {
    Canary {
        flow: CanaryFlow,
        world: World<CanaryTimer>,
    },
    Ab {
        flow: AbFlow,
        world: World<AbTimer>,
    },
    Migrate {
        flow: MigrationFlow,
        world: World<MigrationTimer>,
    },
    Meshbench {
        run: PipelineRun,
        report: MeshBenchReport,
        worlds: Vec<(MeshKind, World<()>)>,
    },
    Crudbench {
        run: PipelineRun,
        table: CrudTable,
    },
}

pub struct RunOutcome {
    pub run_id: String,
    pub seed: u64,
    pub end: Option<RunEnd>,
    pub outcome: Outcome,
}

fn setup(cfg: &ScenarioConfig, seed: u64, kind: MeshKind, trace: bool) -> WorldSetup {
    let mut telemetry = cfg.telemetry.clone();
    telemetry.trace = trace;
    WorldSetup {
        seed,
        mode: cfg.mesh.mesh_mode(kind),
        propagation: PropagationConfig {
            push_delay_ns: cfg.push_delay_ns(),
        },
        router: cfg.mesh.router,
        ejection_s: cfg.mesh.ejection_s,
        telemetry,
    }
}

/// World with the config's initial policies, autostarted xApps and E2
/// nodes in place, plus the catalog of every configured xApp.
pub fn build_world<T>(cfg: &ScenarioConfig, seed: u64, kind: MeshKind, trace: bool) -> Result<(World<T>, Catalog), Error> {
    let mut world = World::new(setup(cfg, seed, kind, trace)).map_err(|message| ConfigError::Invalid {
        path: "telemetry".into(),
        message,
    })?;
    let catalog = Catalog(cfg.xapps.iter().map(|x| x.spec()).collect());
    for x in cfg.xapps.iter().filter(|x| x.autostart) {
        world.deploy(x.spec())?;
    }
    for r in &cfg.mesh.routes {
        world.install_route(r.clone())?;
    }
    for d in &cfg.mesh.destinations {
        world.install_destination(d);
    }
    for n in &cfg.e2nodes {
        let horizon = n.profile.duration_ns().unwrap_or(u64::MAX);
        world.add_e2_node(n.clone(), horizon);
    }
    Ok((world, catalog))
}

fn limit(cfg: &ScenarioConfig) -> VirtualTime {
    cfg.horizon_s.map_or(VirtualTime::MAX, VirtualTime::from_secs_f64)
}

fn drive<F: Flow>(world: &mut World<F::Timer>, flow: &mut F, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunEnd, Error> {
    world.set_pacer(opts.pace.map(Pacer::new));
    run_flow(world, flow, limit(cfg))
}

pub fn run_id_for(cfg: &ScenarioConfig, seed: u64) -> String {
    format!("{}-{seed}", cfg.name())
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutcome, Error> {
    let seed = opts.seed;
    let run_id = opts.run_id.clone().unwrap_or_else(|| run_id_for(cfg, seed));
    let trace = opts.trace.unwrap_or(cfg.telemetry.trace);
    let (end, outcome) = match &cfg.flow {
        FlowPlan::Canary(plan) => {
            let (mut world, catalog) = build_world(cfg, seed, cfg.mesh.mode, trace)?;
            let mut flow = CanaryFlow::new(&run_id, plan.clone(), catalog);
            let end = drive(&mut world, &mut flow, cfg, opts)?;
            (Some(end), Outcome::Canary { flow, world })
        }
        FlowPlan::Ab(plan) => {
            let (mut world, catalog) = build_world(cfg, seed, cfg.mesh.mode, trace)?;
            let mut flow = AbFlow::new(&run_id, plan.clone(), catalog);
            let end = drive(&mut world, &mut flow, cfg, opts)?;
            (Some(end), Outcome::Ab { flow, world })
        }
        FlowPlan::Migrate(plan) => {
            let (mut world, _) = build_world(cfg, seed, cfg.mesh.mode, trace)?;
            let choice = opts.approvals.clone().unwrap_or(match plan.approval {
                crate::lifecycle::plan::ApprovalMode::Auto => ApprovalChoice::Auto,
                crate::lifecycle::plan::ApprovalMode::Interactive => ApprovalChoice::Interactive,
            });
            let mut flow = MigrationFlow::new(&run_id, plan.clone(), choice.source());
            let end = drive(&mut world, &mut flow, cfg, opts)?;
            (Some(end), Outcome::Migrate { flow, world })
        }
        FlowPlan::Meshbench(plan) => {
            let mut run = PipelineRun::new(&run_id, "meshbench");
            run.transition(RunState::Running, VirtualTime::ZERO, format!("modes={:?}", plan.modes))?;
            let duration = plan.duration_s.map(secs_to_nanos).unwrap_or_else(|| {
                cfg.e2nodes
                    .iter()
                    .map(|n| secs_to_nanos(n.start_s) + n.profile.duration_ns().unwrap_or(60_000_000_000))
                    .max()
                    .unwrap_or(60_000_000_000)
            });
            let mut worlds = Vec::new();
            let mut rows = Vec::new();
            for &kind in &plan.modes {
                let (mut world, _) = build_world::<()>(cfg, seed, kind, trace)?;
                let mut flow = HorizonFlow::new(VirtualTime::from_nanos(duration));
                drive(&mut world, &mut flow, cfg, opts)?;
                let h = world.hop_stats();
                rows.push(MeshBenchRow {
                    mode: kind,
                    messages: h.count,
                    mean_added_latency_ns: h.mean_ns(),
                    min_added_latency_ns: h.min_ns,
                    max_added_latency_ns: h.max_ns,
                });
                run.note(
                    VirtualTime::from_nanos(duration),
                    "mode_done",
                    format!("mode={kind} messages={} mean_added_latency_ns={:.1}", h.count, h.mean_ns()),
                );
                worlds.push((kind, world));
            }
            let mean = |k| rows.iter().find(|r: &&MeshBenchRow| r.mode == k).map(|r| r.mean_added_latency_ns);
            let mut ratios = BTreeMap::new();
            for (a, b) in [
                (MeshKind::Sidecar, MeshKind::NodeProxy),
                (MeshKind::NodeProxy, MeshKind::NoMesh),
                (MeshKind::NoMesh, MeshKind::InKernel),
            ] {
                if let (Some(x), Some(y)) = (mean(a), mean(b)) {
                    ratios.insert(format!("{a}/{b}"), x / y);
                }
            }
            run.transition(RunState::Succeeded, VirtualTime::from_nanos(duration), "all modes measured")?;
            (
                None,
                Outcome::Meshbench {
                    run,
                    report: MeshBenchReport { rows, ratios },
                    worlds,
                },
            )
        }
        FlowPlan::Crudbench(plan) => {
            let mut run = PipelineRun::new(&run_id, "crudbench");
            run.transition(
                RunState::Running,
                VirtualTime::ZERO,
                format!("modes={:?} repetitions={}", plan.modes, plan.repetitions),
            )?;
            let table = run_crud_bench(plan, seed);
            run.transition(RunState::Succeeded, VirtualTime::ZERO, format!("{} cells", table.cells.len()))?;
            (None, Outcome::Crudbench { run, table })
        }
    };
    Ok(RunOutcome {
        run_id,
        seed,
        end,
        outcome,
    })
}

fn counters_json<T>(world: &World<T>) -> serde_json::Value {
    let c = world.counters();
    json!({
        "sent": c.sent,
        "delivered": c.delivered,
        "dropped_by_queue": c.dropped_by_queue,
        "dropped_by_gate": c.dropped_by_gate,
        "undeliverable": c.undeliverable,
        "events_executed": world.events_executed(),
    })
}

impl RunOutcome {
    pub fn run(&self) -> &PipelineRun {
        match &self.outcome {
            Outcome::Canary { flow, .. } => flow.run(),
            Outcome::Ab { flow, .. } => flow.run(),
            Outcome::Migrate { flow, .. } => flow.run(),
            Outcome::Meshbench { run, .. } | Outcome::Crudbench { run, .. } => run,
        }
    }

    pub fn state(&self) -> RunState {
        self.run().state()
    }

    pub fn exit_code(&self) -> i32 {
        self.state().exit_code()
    }

    pub fn flow_name(&self) -> &'static str {
        match &self.outcome {
            Outcome::Canary { .. } => "canary",
            Outcome::Ab { .. } => "ab",
            Outcome::Migrate { .. } => "migrate",
            Outcome::Meshbench { .. } => "meshbench",
            Outcome::Crudbench { .. } => "crudbench",
        }
    }

    /// Telemetry stores by export label.
    pub fn telemetry(&self) -> Vec<(String, &Telemetry)> {
        match &self.outcome {
            Outcome::Canary { world, .. } => vec![("metrics".into(), &world.telemetry)],
            Outcome::Ab { world, .. } => vec![("metrics".into(), &world.telemetry)],
            Outcome::Migrate { world, .. } => vec![("metrics".into(), &world.telemetry)],
            Outcome::Meshbench { worlds, .. } => worlds
                .iter()
                .map(|(k, w)| (format!("metrics_{k}"), &w.telemetry))
                .collect(),
            Outcome::Crudbench { .. } => vec![],
        }
    }

    pub fn summary(&self) -> serde_json::Value {
        let (report, counters) = match &self.outcome {
            Outcome::Canary { flow, world } => (json!(flow.report()), counters_json(world)),
            Outcome::Ab { flow, world } => (json!(flow.report()), counters_json(world)),
            Outcome::Migrate { flow, world } => (json!(flow.report()), counters_json(world)),
            Outcome::Meshbench { report, worlds, .. } => {
                let c: BTreeMap<String, serde_json::Value> =
                    worlds.iter().map(|(k, w)| (k.to_string(), counters_json(w))).collect();
                (json!(report), json!(c))
            }
            Outcome::Crudbench { table, .. } => {
                let cells: Vec<_> = table
                    .cells
                    .iter()
                    .map(|c| {
                        json!({
                            "mode": c.mode, "op": c.op, "mean_s": c.mean_s, "std_s": c.std_s,
                            "min_s": c.min_s, "max_s": c.max_s, "overhead_fraction": c.overhead_fraction,
                        })
                    })
                    .collect();
                (json!({ "repetitions": table.repetitions, "cells": cells }), json!(null))
            }
        };
        json!({
            "run_id": self.run_id,
            "seed": self.seed,
            "flow": self.flow_name(),
            "state": self.state(),
            "exit_code": self.exit_code(),
            "done_at_ns": self.end.map(|e| e.done_at.as_nanos()),
            "report": report,
            "counters": counters,
        })
    }

    /// Scalar metrics for sweep summaries.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("exit_code".into(), self.exit_code() as f64);
        let mut counters = |c: crate::msgplane::PlaneCounters| {
            m.insert("sent".into(), c.sent as f64);
            m.insert("delivered".into(), c.delivered as f64);
            m.insert("dropped_by_queue".into(), c.dropped_by_queue as f64);
            m.insert("dropped_by_gate".into(), c.dropped_by_gate as f64);
            m.insert("undeliverable".into(), c.undeliverable as f64);
        };
        match &self.outcome {
            Outcome::Canary { flow, world } => {
                counters(world.counters());
                let r = flow.report();
                if let Some(t) = r.migration_complete_at_s {
                    m.insert("migration_complete_at_s".into(), t);
                }
                m.insert("rolled_back".into(), r.rolled_back_at_s.is_some() as u8 as f64);
            }
            Outcome::Ab { flow, world } => {
                counters(world.counters());
                let r = flow.report();
                m.insert("overlap_s".into(), r.overlap_ns as f64 / 1e9);
                if let Some(g) = r.gap_ns {
                    m.insert("gap_s".into(), g as f64 / 1e9);
                }
            }
            Outcome::Migrate { flow, world } => {
                counters(world.counters());
                let r = flow.report();
                m.insert("total_automated_s".into(), r.total_automated_s);
                if !r.phases.is_empty() {
                    let per_phase_ns = r.total_automated_ns / r.phases.len() as u64;
                    m.insert("phase_time_s".into(), per_phase_ns as f64 / 1e9);
                }
            }
            Outcome::Meshbench { report, .. } => {
                for r in &report.rows {
                    m.insert(format!("mean_added_latency_ms.{}", r.mode), r.mean_added_latency_ns / 1e6);
                }
                for (k, v) in &report.ratios {
                    m.insert(format!("ratio.{k}"), *v);
                }
            }
            Outcome::Crudbench { table, .. } => {
                for c in &table.cells {
                    m.insert(format!("mean_s.{}.{}", c.mode, c.op.as_str()), c.mean_s);
                }
            }
        }
        m
    }

    /// Writes every export into `dir` and returns the paths written.
    pub fn write_exports(&self, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
        let mut written = Vec::new();
        for (label, t) in self.telemetry() {
            let csv = dir.join(format!("{label}.csv"));
            telemetry::write_csv(t, &csv)?;
            let jsonl = dir.join(format!("{label}.jsonl"));
            telemetry::write_jsonl(t, &jsonl)?;
            written.extend([csv, jsonl]);
            if !t.traces().is_empty() {
                let p = dir.join(format!("{}.jsonl", label.replace("metrics", "traces")));
                telemetry::write_trace(t, &p)?;
                written.push(p);
            }
        }
        if let Outcome::Crudbench { table, .. } = &self.outcome {
            let p = dir.join("crud.csv");
            write_text(&p, &table.csv())?;
            written.push(p);
        }
        let events = dir.join("events.jsonl");
        self.run().write_events(&events)?;
        written.push(events);
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&self.summary()).map_err(|source| ExportError::Json {
            path: summary.clone(),
            source,
        })?;
        write_text(&summary, &(text + "\n"))?;
        written.push(summary);
        Ok(written)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExportError> {
    let io = |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(io)?;
    }
    std::fs::write(path, text).map_err(io)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryStat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        // shifted by the first value so identical runs give an exact mean
        let shift = values.first().copied().unwrap_or(0.0);
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        SummaryStat {
            n,
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRun {
    pub seed: u64,
    pub run_id: String,
    pub state: Option<RunState>,
    pub exit_code: i32,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub scenario: String,
    pub repetitions: usize,
    pub runs: Vec<SweepRun>,
    pub states: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, SummaryStat>,
}

impl SweepReport {
    pub fn any_errored(&self) -> bool {
        self.runs.iter().any(|r| r.error.is_some())
    }

    pub fn write(&self, path: &Path) -> Result<(), ExportError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| ExportError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        write_text(path, &(text + "\n"))
    }
}

/// Runs seeds `base_seed .. base_seed + n` on up to `parallel` workers.
/// Each run's exports go to `<out>/<run_id>/` when `out` is given.
pub fn sweep(
    cfg: &ScenarioConfig,
    n: usize,
    parallel: usize,
    base_seed: u64,
    out: Option<&Path>,
    approvals: Option<ApprovalChoice>,
) -> SweepReport {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(SweepRun, Option<BTreeMap<String, f64>>)> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let seed = base_seed.wrapping_add(i);
                let opts = RunOptions {
                    seed,
                    approvals: approvals.clone(),
                    ..RunOptions::default()
                };
                let run_id = run_id_for(cfg, seed);
                let res = run_scenario(cfg, &opts).and_then(|o| {
                    if let Some(dir) = out {
                        o.write_exports(&dir.join(&o.run_id))?;
                    }
                    Ok(o)
                });
                match res {
                    Ok(o) => (
                        SweepRun {
                            seed,
                            run_id,
                            state: Some(o.state()),
                            exit_code: o.exit_code(),
                            error: None,
                        },
                        Some(o.metrics()),
                    ),
                    Err(e) => (
                        SweepRun {
                            seed,
                            run_id,
                            state: None,
                            exit_code: 1,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                }
            })
            .collect()
    });
    let mut states = BTreeMap::new();
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (r, m) in &results {
        let key = r.state.map_or("ERROR".to_string(), |s| s.to_string());
        *states.entry(key).or_insert(0) += 1;
        for (k, v) in m.iter().flatten() {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    SweepReport {
        scenario: cfg.name().to_string(),
        repetitions: n,
        runs: results.into_iter().map(|(r, _)| r).collect(),
        states,
        metrics: values.iter().map(|(k, v)| (k.clone(), SummaryStat::of(v))).collect(),
    }
}
