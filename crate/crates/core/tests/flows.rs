use std::path::Path;

use ranops_core::config::ScenarioConfig;
use ranops_core::error::LifecycleError;
use ranops_core::lifecycle::{PipelineTemplate, RunState, ScriptedApprovals};
use ranops_core::scenario::{run_scenario, ApprovalChoice, Outcome, RunOptions};
use ranops_core::sim::VirtualTime;

const CANARY: &str = r#"
[mesh]
routes = [{ host = "kpimon", splits = [{ version = "v1", weight = 100 }] }]

[[e2nodes]]
gnb_id = "gnb-1"
host = "kpimon"
start_s = 2.0
profile = { kind = "constant", rate = RATE }

[[xapps]]
name = "kpimon"
version = "v1"

[[xapps]]
name = "kpimon"
version = "v2"
autostart = false

[flow]
kind = "canary"
host = "kpimon"
stable_version = "v1"
candidate_version = "v2"
step_pct = 25
interval_s = 20.0
"#;

fn canary(rate: f64) -> ScenarioConfig {
    ScenarioConfig::parse(&CANARY.replace("RATE", &format!("{rate:.1}")), "canary.cfg", &[]).unwrap()
}

#[test]
fn light_canary_promotes() {
    let out = run_scenario(&canary(50.0), &RunOptions::with_seed(3)).unwrap();
    assert_eq!(out.state(), RunState::Succeeded);
    let Outcome::Canary { world, flow } = &out.outcome else { panic!() };
    let weights: Vec<u32> = flow.report().applied.iter().map(|a| a.candidate_weight).collect();
    assert_eq!(weights, [0, 25, 50, 75, 100]);
    assert_eq!(flow.report().migration_complete_at_s, Some(80.5));
    let route = world.mesh.effective_route("kpimon").unwrap();
    assert_eq!((route.weight_of("v1"), route.weight_of("v2")), (0, 100));
    assert!(world.find_version("kpimon", "v1").is_none());
    assert_eq!(world.counters().dropped_by_queue, 0);
}

#[test]
fn overloaded_candidate_rolls_back() {
    let out = run_scenario(&canary(1000.0), &RunOptions::with_seed(3)).unwrap();
    assert_eq!(out.state(), RunState::RolledBack);
    assert_eq!(out.exit_code(), 2);
    let Outcome::Canary { world, flow } = &out.outcome else { panic!() };
    // 1000 msg/s x 75% exceeds one instance's 600 msg/s
    let r = flow.report();
    assert_eq!(r.rolled_back_at_s, Some(80.0));
    assert!(r.windows.last().is_some_and(|w| !w.pass && w.candidate_weight == 75));
    let route = world.mesh.effective_route("kpimon").unwrap();
    assert_eq!((route.weight_of("v1"), route.weight_of("v2")), (100, 0));
    assert!(world.find_version("kpimon", "v2").is_none());
    assert!(world.counters().settled() == world.counters().sent);
}

#[test]
fn rollback_is_refused_after_success() {
    let cfg = canary(10.0);
    let mut out = run_scenario(&cfg, &RunOptions::with_seed(1)).unwrap();
    let Outcome::Canary { world, flow } = &mut out.outcome else { panic!() };
    assert!(matches!(flow.rollback(world), Err(ranops_core::error::Error::Lifecycle(LifecycleError::NotRollbackable(_)))));
}

const MIGRATE: &str = r#"
[[e2nodes]]
gnb_id = "gnb-sim"
host = "kpimon"
connected = false
profile = { kind = "constant", rate = 100.0 }

[[e2nodes]]
gnb_id = "gnb-emu"
kind = "EMULATED"
plmn = "00102"
host = "kpimon"
connected = false
profile = { kind = "constant", rate = 100.0 }

[flow]
kind = "migrate"
phases = [{ gnb_id = "gnb-sim" }, { gnb_id = "gnb-emu" }]

[flow.xapp]
name = "kpimon"
"#;

fn migrate(extra: &[&str]) -> ScenarioConfig {
    let overrides: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
    ScenarioConfig::parse(MIGRATE, "migrate.cfg", &overrides).unwrap()
}

fn run_migrate(cfg: &ScenarioConfig, answers: Option<Vec<bool>>) -> ranops_core::scenario::RunOutcome {
    let opts = RunOptions {
        seed: 5,
        approvals: answers.map(ApprovalChoice::Answers),
        ..RunOptions::default()
    };
    run_scenario(cfg, &opts).unwrap()
}

#[test]
fn second_phase_rejected() {
    let out = run_migrate(&migrate(&[]), Some(vec![true, false]));
    assert_eq!(out.state(), RunState::Failed);
    assert_eq!(out.exit_code(), 3);
    let Outcome::Migrate { flow, world } = &out.outcome else { panic!() };
    let r = flow.report();
    assert_eq!(r.phases.len(), 2);
    assert_eq!(r.phases[0].approved, Some(true));
    assert_eq!(r.phases[1].approved, Some(false));
    assert_eq!(flow.error(), Some(&LifecycleError::ApprovalRejected(2)));
    assert!(world.xapp_ids().all(|id| world.undeployed_at(id).is_some()));
    let transitions: Vec<&str> = flow.run().events().iter().map(|e| e.transition.as_str()).collect();
    assert!(transitions.contains(&"AWAITING_APPROVAL->FAILED"), "{transitions:?}");
}

#[test]
fn running_out_of_answers_rejects() {
    let out = run_migrate(&migrate(&[]), Some(vec![true]));
    assert_eq!(out.state(), RunState::Failed);
    let mut s = ScriptedApprovals::new(vec![]);
    assert!(!ranops_core::lifecycle::ApprovalSource::approve(&mut s, 1));
}

#[test]
fn phases_have_their_own_namespace_and_traffic() {
    let out = run_migrate(&migrate(&[]), None);
    assert_eq!(out.state(), RunState::Succeeded);
    let Outcome::Migrate { flow, .. } = &out.outcome else { panic!() };
    let r = flow.report();
    assert_eq!(r.total_automated_ns, 11_200_000_000);
    for (p, gnb) in r.phases.iter().zip(["gnb-sim", "gnb-emu"]) {
        assert_eq!(p.namespace, format!("ricxapp-{gnb}"));
        // connected after registration + subscription: 3.1 s into the phase,
        // then 2.5 s of verification and persistence at 100 msg/s
        assert!(p.indications_delivered >= 240 && p.indications_delivered <= 260, "{}", p.indications_delivered);
    }
}

#[test]
fn plmn_mismatch_fails_the_phase() {
    let cfg = migrate(&["flow.phases.1.plmn=\"00199\""]);
    let out = run_migrate(&cfg, None);
    assert_eq!(out.state(), RunState::Failed);
    let Outcome::Migrate { flow, .. } = &out.outcome else { panic!() };
    assert!(matches!(flow.error(), Some(LifecycleError::InvalidPlan(m)) if m.contains("00199")));
    assert_eq!(flow.report().phases.len(), 1);
}

#[test]
fn unknown_gnb_fails_before_any_deploy() {
    let cfg = migrate(&["flow.phases.1.gnb_id=\"gnb-nope\""]);
    let out = run_migrate(&cfg, None);
    assert_eq!(out.state(), RunState::Failed);
    let Outcome::Migrate { flow, world } = &out.outcome else { panic!() };
    assert_eq!(flow.error(), Some(&LifecycleError::UnknownGnb("gnb-nope".into())));
    assert_eq!(world.xapp_ids().count(), 0);
}

const AB: &str = r#"
[[e2nodes]]
gnb_id = "gnb-1"
host = "prbctl"
profile = { kind = "constant", rate = 200.0 }

[[xapps]]
name = "prbctl"
version = "a"
startup_s = 0.0
control = { period_ms = 10.0, target = "gnb-1" }

[[xapps]]
name = "prbctl"
version = "b"
startup_s = 0.0
control = { period_ms = 20.0, target = "gnb-1" }

[flow]
kind = "ab"
host = "prbctl"
version_a = "a"
version_b = "b"
duration_s = 60.0
switchover_s = 30.0
actuation_gap_s = 4.0
winner_metric = "THROUGHPUT"
"#;

#[test]
fn ab_switch_and_throughput_winner() {
    let cfg = ScenarioConfig::parse(AB, "ab.cfg", &[]).unwrap();
    let out = run_scenario(&cfg, &RunOptions::with_seed(2)).unwrap();
    assert_eq!(out.state(), RunState::Succeeded);
    let Outcome::Ab { flow, world } = &out.outcome else { panic!() };
    let r = flow.report();
    assert_eq!(r.overlap_ns, 0);
    assert_eq!(r.gap_ns, Some(4_000_000_000));
    let v = r.verdict.as_ref().unwrap();
    // A sends every 10 ms, B every 20 ms
    assert_eq!(v.winner, ranops_core::lifecycle::Variant::A);
    assert!((v.a.egress_throughput - 100.0).abs() < 1.0, "{}", v.a.egress_throughput);
    assert!((v.b.egress_throughput - 50.0).abs() < 1.0, "{}", v.b.egress_throughput);
    assert!(world.find_version("prbctl", "b").is_none());
    let route = world.mesh.effective_route("prbctl").unwrap();
    assert_eq!(route.weight_of("a"), 100);
    assert!(world.mesh.egress_allowed("prbctl", "a"));
}

fn templates_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../templates"))
}

#[test]
fn shipped_templates_instantiate() {
    use ranops_core::lifecycle::template::parse_binding;
    use ranops_core::lifecycle::FlowPlan;
    let bind = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), parse_binding(v))).collect();

    let t = PipelineTemplate::load(&templates_dir().join("canary.toml")).unwrap();
    let FlowPlan::Canary(p) = t.instantiate(&bind(&[("host", "kpimon")])).unwrap() else { panic!() };
    assert_eq!(p.weights().len(), 20);
    assert_eq!(p.interval_s, 360.0);
    assert!(t.instantiate(&bind(&[("host", "kpimon"), ("step", "101")])).is_err());
    assert!(matches!(
        t.instantiate(&bind(&[])),
        Err(LifecycleError::MissingBinding { key, .. }) if key == "host"
    ));

    let t = PipelineTemplate::load(&templates_dir().join("ab.toml")).unwrap();
    let FlowPlan::Ab(p) = t.instantiate(&bind(&[("host", "prbctl")])).unwrap() else { panic!() };
    assert_eq!((p.duration_s, p.switchover_s, p.actuation_gap_s), (600.0, 300.0, 6.0));

    let t = PipelineTemplate::load(&templates_dir().join("migrate.toml")).unwrap();
    let FlowPlan::Migrate(p) = t.instantiate(&bind(&[("xapp", "kpimon")])).unwrap() else { panic!() };
    assert_eq!(p.phases.len(), 3);
    assert_eq!(p.budgets.automated_s(), 5.6);
}

#[test]
fn event_log_is_ordered_jsonl() {
    let out = run_migrate(&migrate(&[]), None);
    let text = out.run().events_jsonl();
    let mut last = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let t = v["time_ns"].as_u64().unwrap();
        assert!(t >= last);
        last = t;
        for k in ["run_id", "transition", "detail"] {
            assert!(v[k].is_string(), "{line}");
        }
    }
    assert_eq!(last, VirtualTime::from_millis(11_200).as_nanos());
}
