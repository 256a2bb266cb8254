//! Create/update/delete timing under each mesh data plane.
//!
//! Durations are modelled constants (base + mesh cost); each sample gets a
//! seeded jitter. Jitter is drawn in antithetic pairs (+u, −u), so for an
//! even repetition count the cell mean equals the model exactly.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::lifecycle::plan::{CrudBenchPlan, CrudOp};
use crate::mesh::MeshKind;
use crate::sim::{secs_to_nanos, RandomStream};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrudCell {
    pub mode: MeshKind,
    pub op: CrudOp,
    pub samples_ns: Vec<u64>,
    pub mean_s: f64,
    pub std_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Relative to the NO_MESH mean of the same operation.
    pub overhead_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrudTable {
    pub repetitions: u32,
    pub cells: Vec<CrudCell>,
}

impl CrudTable {
    pub fn cell(&self, mode: MeshKind, op: CrudOp) -> Option<&CrudCell> {
        self.cells.iter().find(|c| c.mode == mode && c.op == op)
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "op", "repetitions", "mean_s", "std_s", "min_s", "max_s", "overhead_pct"])
            .expect("in-memory write");
        for c in &self.cells {
            w.write_record([
                c.mode.as_str().to_string(),
                c.op.as_str().to_string(),
                self.repetitions.to_string(),
                format!("{:.6}", c.mean_s),
                format!("{:.6}", c.std_s),
                format!("{:.6}", c.min_s),
                format!("{:.6}", c.max_s),
                c.overhead_fraction.map_or(String::new(), |f| format!("{:.3}", f * 100.0)),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn stats(samples: &[u64]) -> (f64, f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|&s| s as f64).sum::<f64>() / n;
    let var = samples.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    let min = *samples.iter().min().unwrap() as f64;
    let max = *samples.iter().max().unwrap() as f64;
    (mean / 1e9, var.sqrt() / 1e9, min / 1e9, max / 1e9)
}

pub fn run_crud_bench(plan: &CrudBenchPlan, seed: u64) -> CrudTable {
    let root = RandomStream::new(seed, "crudbench");
    let mut cells = Vec::new();
    for &mode in &plan.modes {
        for op in CrudOp::ALL {
            let mean_ns = secs_to_nanos(plan.base.get(op) + plan.mesh_cost[&mode].get(op)) as i64;
            let half = (mean_ns as f64 * plan.jitter_fraction) as u64;
            let mut rng = root.substream(&format!("{}.{}", mode.as_str(), op.as_str()));
            let mut samples = Vec::with_capacity(plan.repetitions as usize);
            let mut pending: Option<i64> = None;
            for _ in 0..plan.repetitions {
                let d = match pending.take() {
                    Some(u) => -u,
                    None => {
                        let u = rng.uniform_inclusive(0, 2 * half) as i64 - half as i64;
                        pending = Some(u);
                        u
                    }
                };
                samples.push((mean_ns + d) as u64);
            }
            let (mean_s, std_s, min_s, max_s) = stats(&samples);
            cells.push(CrudCell {
                mode,
                op,
                samples_ns: samples,
                mean_s,
                std_s,
                min_s,
                max_s,
                overhead_fraction: None,
            });
        }
    }
    let baseline: BTreeMap<CrudOp, f64> = cells
        .iter()
        .filter(|c| c.mode == MeshKind::NoMesh)
        .map(|c| (c.op, c.mean_s))
        .collect();
    for c in &mut cells {
        c.overhead_fraction = baseline.get(&c.op).map(|b| (c.mean_s - b) / b);
    }
    CrudTable {
        repetitions: plan.repetitions,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> CrudBenchPlan {
        toml::from_str("").unwrap()
    }

    #[test]
    fn baselines_and_sample_counts() {
        let t = run_crud_bench(&plan(), 1);
        assert_eq!(t.cells.len(), 12);
        for c in &t.cells {
            assert_eq!(c.samples_ns.len(), 100);
        }
        let mean = |m, op| t.cell(m, op).unwrap().mean_s;
        assert!((mean(MeshKind::NoMesh, CrudOp::Create) - 7.3).abs() < 1e-9);
        assert!((mean(MeshKind::NoMesh, CrudOp::Update) - 20.2).abs() < 1e-9);
        assert!((mean(MeshKind::NoMesh, CrudOp::Delete) - 10.3).abs() < 1e-9);
        assert!((mean(MeshKind::NodeProxy, CrudOp::Create) - 6.9).abs() < 1e-9);
        assert!((mean(MeshKind::InKernel, CrudOp::Create) - 7.6).abs() < 1e-9);
    }

    #[test]
    fn overhead_within_ten_percent() {
        let t = run_crud_bench(&plan(), 9);
        for c in &t.cells {
            assert!(c.overhead_fraction.unwrap().abs() <= 0.10, "{:?} {:?}", c.mode, c.op);
        }
    }

    #[test]
    fn seeded_jitter() {
        let a = run_crud_bench(&plan(), 3);
        let b = run_crud_bench(&plan(), 3);
        let c = run_crud_bench(&plan(), 4);
        assert_eq!(a, b);
        assert_ne!(a.cells[0].samples_ns, c.cells[0].samples_ns);
        let s = &a.cells[0].samples_ns;
        assert!(s.iter().all(|&x| (7_154_000_000..=7_446_000_000).contains(&x)));
    }
}
