use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ranops_core::config::{resolve_seed, ScenarioConfig, SEED_ENV};
use ranops_core::error::Error;
use ranops_core::lifecycle::template::parse_binding;
use ranops_core::lifecycle::PipelineTemplate;
use ranops_core::scenario::{run_id_for, run_scenario, sweep, ApprovalChoice, RunOptions};

#[derive(Parser)]
#[command(name = "ranops", version, about = "Simulated xApp lifecycle pipelines over a service-mesh RIC")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its exports.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Virtual seconds per wall-clock second; default is as fast as possible.
        #[arg(long)]
        pace: Option<f64>,
        /// Output directory (default ./out/<run_id>/).
        #[arg(long)]
        out: Option<PathBuf>,
        /// auto, interactive or file:<answers>.
        #[arg(long)]
        approve: Option<String>,
        /// Keep per-hop traces and export them.
        #[arg(long)]
        trace: bool,
    },
    /// Run a scenario over consecutive seeds and summarize.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Number of runs.
        #[arg(short = 'n', long, default_value_t = 10)]
        repetitions: usize,
        /// Runs in flight at once.
        #[arg(short = 'j', long, default_value_t = 4)]
        parallel: usize,
        /// Output directory (default ./out/<name>-sweep/).
        #[arg(long)]
        out: Option<PathBuf>,
        /// auto or file:<answers>.
        #[arg(long)]
        approve: Option<String>,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// List the scenario files in a directory.
    ListScenarios {
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    config: PathBuf,
    /// Dotted-path override, e.g. flow.step_pct=10. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the flow section with an instantiated pipeline template.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Template placeholder binding. Repeatable.
    #[arg(long = "bind", value_name = "KEY=VALUE", requires = "template")]
    bind: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<(ScenarioConfig, u64), Error> {
        let mut cfg = ScenarioConfig::load(&self.config, &self.set)?;
        if let Some(path) = &self.template {
            let t = PipelineTemplate::load(path)?;
            let mut bindings = BTreeMap::new();
            for b in &self.bind {
                let (k, v) = b
                    .split_once('=')
                    .ok_or_else(|| ranops_core::error::ConfigError::BadOverride(b.clone()))?;
                bindings.insert(k.trim().to_string(), parse_binding(v.trim()));
            }
            let flow = t.instantiate(&bindings)?;
            cfg = cfg.with_flow(flow, &path.display().to_string())?;
        }
        let env = std::env::var(SEED_ENV).ok();
        let seed = resolve_seed(self.seed, cfg.seed, env.as_deref())?;
        Ok((cfg, seed))
    }
}

fn default_out(cfg: &ScenarioConfig, leaf: &str) -> PathBuf {
    let root = cfg.output_dir.as_deref().unwrap_or("out");
    Path::new(root).join(leaf)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Run {
            scenario,
            pace,
            out,
            approve,
            trace,
        } => {
            let (cfg, seed) = scenario.load()?;
            let approvals = approve.as_deref().map(ApprovalChoice::parse).transpose()?;
            let opts = RunOptions {
                seed,
                run_id: None,
                pace,
                trace: trace.then_some(true),
                approvals,
            };
            let outcome = run_scenario(&cfg, &opts)?;
            let dir = out.unwrap_or_else(|| default_out(&cfg, &outcome.run_id));
            outcome.write_exports(&dir)?;
            println!(
                "{} {} exit={} out={}",
                outcome.run_id,
                outcome.state(),
                outcome.exit_code(),
                dir.display()
            );
            Ok(outcome.exit_code())
        }
        Command::Sweep {
            scenario,
            repetitions,
            parallel,
            out,
            approve,
        } => {
            let (cfg, seed) = scenario.load()?;
            if repetitions == 0 {
                return Err(ranops_core::error::ConfigError::Invalid {
                    path: "--repetitions".into(),
                    message: "must be at least 1".into(),
                }
                .into());
            }
            let approvals = approve.as_deref().map(ApprovalChoice::parse).transpose()?;
            if approvals == Some(ApprovalChoice::Interactive) {
                return Err(ranops_core::error::ConfigError::Invalid {
                    path: "--approve".into(),
                    message: "interactive approvals are not available in a sweep".into(),
                }
                .into());
            }
            let dir = out.unwrap_or_else(|| default_out(&cfg, &format!("{}-sweep", cfg.name())));
            let report = sweep(&cfg, repetitions, parallel, seed, Some(&dir), approvals);
            let summary = dir.join("sweep_summary.json");
            report.write(&summary)?;
            for r in &report.runs {
                match &r.error {
                    Some(e) => println!("{} ERROR {e}", r.run_id),
                    None => println!("{} {} exit={}", r.run_id, r.state.map(|s| s.to_string()).unwrap_or_default(), r.exit_code),
                }
            }
            for (k, s) in &report.metrics {
                println!("{k}: mean={:.6} std={:.6} min={:.6} max={:.6}", s.mean, s.std, s.min, s.max);
            }
            println!("summary={}", summary.display());
            Ok(if report.any_errored() { 1 } else { 0 })
        }
        Command::Validate { scenario } => {
            let (cfg, seed) = scenario.load()?;
            println!("{}: ok ({} flow, run_id {})", scenario.config.display(), cfg.flow.name(), run_id_for(&cfg, seed));
            Ok(0)
        }
        Command::ListScenarios { dir } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|source| ranops_core::error::ConfigError::Io {
                    path: dir.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
                .collect();
            paths.sort();
            for p in paths {
                let text = std::fs::read_to_string(&p).unwrap_or_default();
                let about = text
                    .lines()
                    .take_while(|l| l.starts_with('#'))
                    .map(|l| l.trim_start_matches('#').trim())
                    .collect::<Vec<_>>()
                    .join(" ");
                let stem = p.file_stem().unwrap_or_default().to_string_lossy();
                match ScenarioConfig::load(&p, &[]) {
                    Ok(cfg) => println!("{stem:<24} {:<10} {about}", cfg.flow.name()),
                    Err(e) => println!("{stem:<24} {:<10} {e}", "invalid"),
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
