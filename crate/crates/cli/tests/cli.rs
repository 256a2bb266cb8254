use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> String {
    root().join("scenarios").join(format!("{name}.cfg")).display().to_string()
}

fn ranops(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ranops"))
        .args(args)
        .env_remove("RANOPS_SEED")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn invalid_override_exits_one_before_running() {
    let out = tempfile::tempdir().unwrap();
    let o = ranops(&["run", &scenario("canary_100"), "--set", "flow.step_pct=101", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("step_pct"), "{}", stderr(&o));
    assert!(!out.path().join("summary.json").exists());
}

#[test]
fn validate_and_list() {
    let o = ranops(&["validate", &scenario("ab_600s")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ab flow"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "# bad seed\n\nseed = \"many\"\n[flow]\nkind = \"crudbench\"\n").unwrap();
    let o = ranops(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg") && stderr(&o).contains("line 3"), "{}", stderr(&o));

    let o = ranops(&["list-scenarios", "--dir", root().join("scenarios").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let listing = String::from_utf8_lossy(&o.stdout);
    for name in ["canary_100", "canary_1000", "ab_600s", "migrate_3phase", "meshbench_burst", "crudbench"] {
        assert!(listing.contains(name), "{listing}");
    }
}

#[test]
fn scripted_rejection_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let answers = dir.path().join("answers.txt");
    std::fs::write(&answers, "# phase 1\ny\nn\n").unwrap();
    let out = dir.path().join("out");
    let o = ranops(&[
        "run",
        &scenario("migrate_3phase"),
        "--approve",
        &format!("file:{}", answers.display()),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let s = summary(&out);
    assert_eq!(s["state"], "FAILED");
    assert_eq!(s["report"]["phases"][1]["approved"], false);
}

#[test]
fn malformed_answers_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let answers = dir.path().join("answers.txt");
    std::fs::write(&answers, "y\nmaybe\n").unwrap();
    let o = ranops(&["run", &scenario("migrate_3phase"), "--approve", &format!("file:{}", answers.display())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn interactive_eof_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ranops"))
        .args(["run", &scenario("migrate_3phase"), "--approve", "interactive", "--out"])
        .arg(dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // approve the first phase, then close stdin
    child.stdin.take().unwrap().write_all(b"y\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("approve phase 1 [y/N]") && err.contains("approve phase 2 [y/N]"), "{err}");
    assert_eq!(summary(dir.path())["report"]["phases"].as_array().unwrap().len(), 2);
}

#[test]
fn auto_migration_succeeds_without_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let o = ranops(&["run", &scenario("migrate_3phase"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stderr(&o).contains("approve phase"));
    let s = summary(dir.path());
    assert_eq!(s["report"]["total_automated_ns"], 16_800_000_000u64);
}

#[test]
fn single_run_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let sweep_dir = dir.path().join("sweep");
    let o = ranops(&["run", &scenario("ab_600s"), "--seed", "9", "--out", run_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let o = ranops(&["sweep", &scenario("ab_600s"), "-n", "1", "--seed", "9", "--out", sweep_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let child = sweep_dir.join("ab_600s-9");
    for f in ["metrics.csv", "metrics.jsonl", "events.jsonl", "summary.json"] {
        assert_eq!(std::fs::read(run_dir.join(f)).unwrap(), std::fs::read(child.join(f)).unwrap(), "{f}");
    }
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sweep_dir.join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(s["repetitions"], 1);
    assert_eq!(s["metrics"]["gap_s"]["mean"], 6.0);
    assert_eq!(s["metrics"]["gap_s"]["std"], 0.0);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("crud.cfg");
    std::fs::write(&cfg, "[flow]\nkind = \"crudbench\"\nrepetitions = 4\n").unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_ranops"))
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("RANOPS_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(&out)["run_id"], "crud-42");
    let o = ranops(&["run", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(&out)["seed"], 7);
}

#[test]
fn template_replaces_the_flow() {
    let dir = tempfile::tempdir().unwrap();
    let o = ranops(&[
        "run",
        &scenario("canary_100"),
        "--template",
        root().join("templates/canary.toml").to_str().unwrap(),
        "--bind",
        "host=kpimon",
        "--bind",
        "step=50",
        "--bind",
        "interval=30",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let applied = summary(dir.path())["report"]["applied"].as_array().unwrap().clone();
    let weights: Vec<u64> = applied.iter().map(|a| a["candidate_weight"].as_u64().unwrap()).collect();
    assert_eq!(weights, [0, 50, 100]);
}

#[test]
fn traces_only_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    let traced = dir.path().join("traced");
    let args = |out: &Path| vec!["run".to_string(), scenario("migrate_3phase"), "--out".into(), out.display().to_string()];
    let a = args(&plain);
    assert_eq!(ranops(&a.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(0));
    let mut b = args(&traced);
    b.push("--trace".into());
    assert_eq!(ranops(&b.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(0));
    assert!(!plain.join("traces.jsonl").exists());
    let text = std::fs::read_to_string(traced.join("traces.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first.is_object());
}
