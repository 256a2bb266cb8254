//! Byte-stable CSV and JSON-lines writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MetricSample, Telemetry};
use crate::error::ExportError;

pub const CSV_HEADER: &str = "t_start_ns,t_end_ns,service,version,direction,delivered,dropped_queue,dropped_gate,undeliverable,lat_mean_ns,lat_p50_ns,lat_p95_ns,lat_p99_ns,lat_max_ns";

fn rows(t: &Telemetry) -> impl Iterator<Item = MetricSample> + '_ {
    t.series_keys().flat_map(move |k| t.series(k))
}

fn quantiles(t: &Telemetry, s: &MetricSample) -> [u64; 3] {
    [0.5, 0.95, 0.99].map(|q| s.latency.quantile(t.bounds(), q))
}

pub fn csv_string(t: &Telemetry) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for s in rows(t) {
        let [p50, p95, p99] = quantiles(t, &s);
        let service = s.service.qualified_name();
        let nums = [
            s.delivered,
            s.dropped_by_queue,
            s.dropped_by_gate,
            s.undeliverable,
            s.latency.mean_ns(),
            p50,
            p95,
            p99,
            s.latency.max_ns,
        ];
        let mut rec: Vec<String> = vec![
            s.t_start.as_nanos().to_string(),
            s.t_end.as_nanos().to_string(),
            service,
            s.service.version.to_string(),
            s.direction.as_str().to_string(),
        ];
        rec.extend(nums.iter().map(u64::to_string));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// Same columns as the CSV plus the interval error fraction (6 decimals).
pub fn jsonl_string(t: &Telemetry) -> String {
    let mut out = String::new();
    for s in rows(t) {
        let [p50, p95, p99] = quantiles(t, &s);
        let q = |v: &str| serde_json::to_string(v).expect("string encodes");
        let _ = writeln!(
            out,
            "{{\"t_start_ns\":{},\"t_end_ns\":{},\"service\":{},\"version\":{},\"direction\":\"{}\",\"delivered\":{},\"dropped_queue\":{},\"dropped_gate\":{},\"undeliverable\":{},\"lat_mean_ns\":{},\"lat_p50_ns\":{},\"lat_p95_ns\":{},\"lat_p99_ns\":{},\"lat_max_ns\":{},\"error_fraction\":{:.6}}}",
            s.t_start.as_nanos(),
            s.t_end.as_nanos(),
            q(&s.service.qualified_name()),
            q(&s.service.version),
            s.direction.as_str(),
            s.delivered,
            s.dropped_by_queue,
            s.dropped_by_gate,
            s.undeliverable,
            s.latency.mean_ns(),
            p50,
            p95,
            p99,
            s.latency.max_ns,
            s.error_fraction(),
        );
    }
    out
}

pub fn trace_jsonl_string(t: &Telemetry) -> String {
    let mut out = String::new();
    for r in t.traces() {
        out.push_str(&serde_json::to_string(r).expect("trace encodes"));
        out.push('\n');
    }
    out
}

fn write(path: &Path, body: &str) -> Result<(), ExportError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, body).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_csv(t: &Telemetry, path: &Path) -> Result<(), ExportError> {
    write(path, &csv_string(t))
}

pub fn write_jsonl(t: &Telemetry, path: &Path) -> Result<(), ExportError> {
    write(path, &jsonl_string(t))
}

pub fn write_trace(t: &Telemetry, path: &Path) -> Result<(), ExportError> {
    write(path, &trace_jsonl_string(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msgplane::{MessageEnvelope, MessageKind, ServiceIdentity};
    use crate::sim::VirtualTime;
    use crate::telemetry::DropReason;

    fn sample_run() -> Telemetry {
        let mut t = Telemetry::default();
        for i in 0..5u64 {
            let mut env = MessageEnvelope::new(
                i,
                MessageKind::E2Indication,
                ServiceIdentity::new("gnb-1", "e2", "ran"),
                "kpimon",
                VirtualTime::from_millis(i * 400),
            );
            env.destination = Some(ServiceIdentity::new("kpimon", "v1", "ricxapp"));
            if i == 3 {
                t.record_drop(&env, DropReason::Queue, env.created_at);
            } else {
                env.delivered_at = Some(env.created_at.saturating_add(2_000_000 + i));
                t.record_delivery(&env);
            }
        }
        t.close(VirtualTime::from_secs(3));
        t
    }

    #[test]
    fn empty_run_is_header_only() {
        let t = Telemetry::default();
        assert_eq!(csv_string(&t), format!("{CSV_HEADER}\n"));
        assert_eq!(jsonl_string(&t), "");
    }

    #[test]
    fn csv_layout() {
        let csv = csv_string(&sample_run());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "0,1000000000,ricxapp/kpimon,v1,INGRESS,3,0,0,0,2000001,2000002,2000002,2000002,2000002"
        );
        assert!(lines[2].starts_with("1000000000,2000000000,ricxapp/kpimon,v1,INGRESS,1,1,0,0,"));
        assert!(lines[3].starts_with("2000000000,3000000000,ricxapp/kpimon,v1,INGRESS,0,0,0,0,0,"));
    }

    #[test]
    fn jsonl_lines_parse_and_carry_error_fraction() {
        let body = jsonl_string(&sample_run());
        let v: Vec<serde_json::Value> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(v.len(), 3);
        assert_eq!(v[1]["error_fraction"].as_f64(), Some(0.5));
        assert!(body.lines().nth(1).unwrap().ends_with("\"error_fraction\":0.500000}"));
    }

    #[test]
    fn files_are_byte_identical_across_writes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a/metrics.csv");
        let b = dir.path().join("b/metrics.csv");
        write_csv(&sample_run(), &a).unwrap();
        write_csv(&sample_run(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_csv(&sample_run(), &blocker.join("metrics.csv")).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
