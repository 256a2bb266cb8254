use std::path::{Path, PathBuf};

use ranops_core::config::ScenarioConfig;
use ranops_core::error::ConfigError;
use ranops_core::lifecycle::FlowPlan;

fn scenarios() -> Vec<PathBuf> {
    let dir = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios"));
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_shipped_scenario_validates() {
    let all = scenarios();
    assert!(all.len() >= 9);
    for p in all {
        let cfg = ScenarioConfig::load(&p, &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(cfg.name(), p.file_stem().unwrap().to_str().unwrap());
    }
}

#[test]
fn canary_scenarios_share_a_shape() {
    for (name, rate, enabled) in [
        ("canary_10", 10.0, true),
        ("canary_100", 100.0, true),
        ("canary_1000", 1000.0, true),
        ("canary_1000_stress", 1000.0, false),
    ] {
        let p = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios")).join(format!("{name}.cfg"));
        let cfg = ScenarioConfig::load(&p, &[]).unwrap();
        let FlowPlan::Canary(plan) = &cfg.flow else { panic!("{name}") };
        assert_eq!((plan.step_pct, plan.interval_s, plan.criteria.enabled), (5, 360.0, enabled));
        let ranops_core::workloads::TrafficProfile::Constant { rate: r } = cfg.e2nodes[0].profile else { panic!() };
        assert_eq!(r, rate);
        assert!(cfg.xapps.iter().all(|x| x.capacity_msgs_per_s == 600.0 && x.queue_capacity == 60));
    }
}

#[test]
fn errors_carry_path_and_line() {
    let text = "seed = 1\n[flow]\nkind = \"crudbench\"\nrepetitons = 3\n";
    let e = ScenarioConfig::parse(text, "typo.cfg", &[]).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, ConfigError::Parse { .. }));
    assert!(msg.contains("typo.cfg") && msg.contains("line 2") && msg.contains("repetitons"), "{msg}");
}

#[test]
fn overrides_reach_nested_arrays() {
    let p = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/canary_100.cfg"));
    let cfg = ScenarioConfig::load(p, &["e2nodes.0.profile.rate=250.0".into(), "mesh.mode=\"IN_KERNEL\"".into()]).unwrap();
    let ranops_core::workloads::TrafficProfile::Constant { rate } = cfg.e2nodes[0].profile else { panic!() };
    assert_eq!(rate, 250.0);
    assert_eq!(cfg.mesh.mode, ranops_core::mesh::MeshKind::InKernel);
    let e = ScenarioConfig::load(p, &["e2nodes.5.host=\"x\"".into()]).unwrap_err();
    assert!(e.to_string().contains("out of range"), "{e}");
}
