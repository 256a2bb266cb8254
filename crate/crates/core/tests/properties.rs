use proptest::prelude::*;

use ranops_core::config::ScenarioConfig;
use ranops_core::msgplane::{MessageEnvelope, MessageKind, ServiceIdentity};
use ranops_core::scenario::{run_scenario, RunOptions};
use ranops_core::sim::VirtualTime;
use ranops_core::telemetry::{csv_string, Direction, Telemetry};

fn xapp() -> ServiceIdentity {
    ServiceIdentity::new("kpimon", "v1", "ricxapp")
}

fn delivery(created: u64, latency: u64) -> MessageEnvelope {
    let mut env = MessageEnvelope::new(
        0,
        MessageKind::E2Indication,
        ServiceIdentity::new("gnb-1", "e2", "ran"),
        "kpimon",
        VirtualTime::from_nanos(created),
    );
    env.destination = Some(xapp());
    env.delivered_at = Some(VirtualTime::from_nanos(created + latency));
    env
}

proptest! {
    #[test]
    fn adjacent_intervals_add_up(
        msgs in prop::collection::vec((0u64..20_000_000_000, 1_000u64..500_000_000), 1..400),
        from in 0u64..10,
        len in 1u64..10,
    ) {
        let mut t = Telemetry::default();
        for (c, l) in &msgs {
            t.record_delivery(&delivery(*c, *l));
        }
        t.close(VirtualTime::from_secs(21));
        let (a, b) = (VirtualTime::from_secs(from), VirtualTime::from_secs(from + len));
        let parts = t.query(&xapp(), Direction::Ingress, a, b);
        let whole = t.aggregate(&xapp(), Direction::Ingress, a, b);
        prop_assert_eq!(parts.len() as u64, len);
        prop_assert_eq!(parts.iter().map(|s| s.delivered).sum::<u64>(), whole.delivered);
        prop_assert_eq!(parts.iter().map(|s| s.latency.count).sum::<u64>(), whole.latency.count);
        prop_assert_eq!(parts.iter().map(|s| s.latency.sum_ns).sum::<u64>(), whole.latency.sum_ns);
        // oracle: count deliveries landing in [a, b) directly
        let direct = msgs.iter().filter(|(c, l)| (a.as_nanos()..b.as_nanos()).contains(&(c + l))).count() as u64;
        prop_assert_eq!(whole.delivered, direct);
    }
}

const SMALL: &str = r#"
[mesh]
mode = "MODE"
routes = [{ host = "app", splits = [{ version = "v1", weight = W1 }, { version = "v2", weight = W2 }] }]

[[e2nodes]]
gnb_id = "gnb-1"
host = "app"
profile = { kind = "constant", rate = RATE }

[[xapps]]
name = "app"
version = "v1"
startup_s = 0.0
capacity_msgs_per_s = CAP

[[xapps]]
name = "app"
version = "v2"
startup_s = 0.0

[flow]
kind = "meshbench"
modes = ["MODE"]
duration_s = 2.0
"#;

fn small(mode: &str, w1: u32, rate: f64, cap: f64) -> ScenarioConfig {
    let text = SMALL
        .replace("MODE", mode)
        .replace("W1", &w1.to_string())
        .replace("W2", &(100 - w1).to_string())
        .replace("RATE", &format!("{rate:.3}"))
        .replace("CAP", &format!("{cap:.3}"));
    ScenarioConfig::parse(&text, "small.cfg", &[]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exports_are_a_function_of_config_and_seed(
        mode in prop_oneof![Just("NO_MESH"), Just("SIDECAR"), Just("NODE_PROXY"), Just("IN_KERNEL")],
        w1 in 0u32..=100,
        rate in 1.0f64..1500.0,
        cap in 50.0f64..1200.0,
        seed in any::<u64>(),
    ) {
        let cfg = small(mode, w1, rate, cap);
        let once = run_scenario(&cfg, &RunOptions::with_seed(seed)).unwrap();
        let twice = run_scenario(&cfg, &RunOptions::with_seed(seed)).unwrap();
        let (a, b) = (once.telemetry(), twice.telemetry());
        prop_assert_eq!(a.len(), 1);
        prop_assert_eq!(csv_string(a[0].1), csv_string(b[0].1));
        prop_assert_eq!(once.run().events_jsonl(), twice.run().events_jsonl());
        let summary = once.summary();
        let c = &summary["counters"][mode];
        let n = |k: &str| c[k].as_u64().unwrap();
        prop_assert_eq!(n("sent"), n("delivered") + n("dropped_by_queue") + n("dropped_by_gate") + n("undeliverable"));
        prop_assert!(n("sent") >= rate.floor() as u64);
    }
}
