//! `rootscope`: diagnose incidents from telemetry files, generate synthetic
//! fault corpora, score diagnoses against ground truth and manage the
//! knowledge base.
//!
//! Exit codes: 0 diagnosed (or command succeeded), 1 error, 2 no alarms.

mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use rootscope_core::config::{DetectorConfig, RunConfig, TelemetryPaths};
use rootscope_core::kb::KnowledgeBase;
use rootscope_core::mcts::DiagnosisReport;
use rootscope_core::oracle::{ExternalConfig, Oracle, OracleMode};
use rootscope_core::pipeline::{diagnose, load_telemetry, DiagnoseOptions, Diagnosis};
use rootscope_core::telemetry::TimeWindow;
use rootscope_sim::baseline::baseline_single_shot;
use rootscope_sim::scenario::{read_manifest, MANIFEST_FILE};
use rootscope_sim::{evaluate, plan_suite, Manifest, Outcome, SuiteConfig};

const REPORT_JSON: &str = "report.json";
const REPORT_MD: &str = "report.md";
const NO_ALARMS: &str = "no alarms; RCA not started";

#[derive(Parser)]
#[command(
    name = "rootscope",
    version,
    about = "Root-cause analysis for microservice incidents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan for alarms and, if any fire, search for the root cause.
    Diagnose(DiagnoseArgs),
    /// Write a suite of synthetic fault scenarios.
    Simulate(SimulateArgs),
    /// Score reports against ground-truth manifests.
    Evaluate(EvaluateArgs),
    /// Knowledge-base maintenance.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OracleChoice {
    Deterministic,
    External,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Run configuration (JSON). Unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding metrics.csv, logs.jsonl, spans.csv and topology.json.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, requires = "window_end")]
    window_start: Option<f64>,
    #[arg(long, requires = "window_start")]
    window_end: Option<f64>,
    #[arg(long, value_enum)]
    oracle: Option<OracleChoice>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Accepted for symmetry with `simulate`; the search itself is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    detector: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SuiteKind {
    /// Random targets across the whole system.
    Default,
    /// Deep chains with noisy entry services.
    Confusion,
}

#[derive(Args)]
struct SimulateArgs {
    /// Suite configuration (JSON); defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SuiteKind::Default, conflicts_with = "config")]
    suite: SuiteKind,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    services: Option<usize>,
    #[arg(long, default_value = "suite")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RunArm {
    Pipeline,
    Baseline,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory of case directories, each with a manifest.json.
    #[arg(long)]
    manifests: PathBuf,
    /// Directory of case directories holding report.json; defaults to the
    /// manifests directory. A case without a report counts as a miss.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Diagnose every case first and write its report.
    #[arg(long, value_enum)]
    run: Option<RunArm>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Also write the scores as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KbCommand {
    /// Store a reviewed diagnosis as a historical case.
    AddCase {
        report: PathBuf,
        /// Confirms that an engineer reviewed the diagnosis.
        #[arg(long)]
        confirm: bool,
        #[arg(long, default_value = "")]
        solution: String,
        #[arg(long, default_value = "kb.json")]
        kb: PathBuf,
    },
    /// List stored cases.
    List {
        #[arg(long, default_value = "kb.json")]
        kb: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Simulate(a) => cmd_simulate(a).map(|()| ExitCode::SUCCESS),
        Command::Evaluate(a) => cmd_evaluate(a).map(|()| ExitCode::SUCCESS),
        Command::Kb { command } => cmd_kb(command).map(|()| ExitCode::SUCCESS),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}

fn load_kb(path: Option<&Path>) -> Result<KnowledgeBase> {
    match path {
        Some(p) => KnowledgeBase::load_or_default(p).with_context(|| format!("knowledge base {}", p.display())),
        None => Ok(KnowledgeBase::default()),
    }
}

fn run_config(a: &DiagnoseArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &a.data {
        cfg.telemetry = TelemetryPaths::in_dir(dir);
        if cfg.window.is_none() {
            let m = dir.join(MANIFEST_FILE);
            if m.exists() {
                cfg.window = Some(read_manifest(&m)?.window);
            }
        }
    }
    if let (Some(s), Some(e)) = (a.window_start, a.window_end) {
        cfg.window = Some(TimeWindow::new(s, e)?);
    }
    match a.oracle {
        Some(OracleChoice::Deterministic) => cfg.oracle = OracleMode::Deterministic,
        Some(OracleChoice::External) => {
            let ext = match &cfg.oracle {
                OracleMode::External(c) => c.clone(),
                OracleMode::Deterministic => ExternalConfig::default(),
            };
            cfg.oracle = OracleMode::External(ext);
        }
        None => {}
    }
    if let OracleMode::External(c) = &cfg.oracle {
        cfg.oracle = OracleMode::External(c.clone().with_env());
    }
    if let Some(n) = a.iterations {
        cfg.mcts.iterations = n;
    }
    if let Some(p) = &a.detector {
        cfg.detector = Some(p.clone());
    }
    if let Some(p) = &a.kb {
        cfg.kb = Some(p.clone());
    }
    if let Some(p) = &a.out {
        cfg.out = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_report(dir: &Path, report: &DiagnosisReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)?;
    fs::write(dir.join(REPORT_JSON), json + "\n")?;
    fs::write(dir.join(REPORT_MD), render::report_markdown(report))?;
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<ExitCode> {
    let cfg = run_config(&a)?;
    let detector = match &cfg.detector {
        Some(p) => DetectorConfig::load(p)?,
        None => DetectorConfig::default(),
    };
    let kb = load_kb(cfg.kb.as_deref())?;
    let window = cfg.window.expect("validated");
    let (telemetry, dep) = load_telemetry(&cfg.telemetry, &window)?;
    info!(
        metrics = telemetry.metrics.len(),
        logs = telemetry.logs.len(),
        spans = telemetry.spans.len(),
        "telemetry loaded"
    );
    let mut oracle = Oracle::new(cfg.oracle.clone())?;
    let opts = DiagnoseOptions {
        detector: &detector,
        kb: &kb,
        mcts: &cfg.mcts,
        top_k: cfg.kb_top_k,
        tau: cfg.kb_tau,
    };
    match diagnose(&telemetry, &dep, window, &opts, &mut oracle)? {
        Diagnosis::NoAlarms(_) => {
            println!("{NO_ALARMS}");
            Ok(ExitCode::from(2))
        }
        Diagnosis::Report(report) => {
            write_report(&cfg.out, &report)?;
            let root = report
                .root_cause_service
                .as_ref()
                .map_or("-".to_string(), ToString::to_string);
            println!(
                "root cause: {root} ({}), path {}; report in {}",
                report.fault_types.top(),
                report
                    .fault_path
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" -> "),
                cfg.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(7);
    let mut cfg = match (&a.config, a.suite) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let c: SuiteConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if a.seed.is_some() {
                c.with_seed(seed)
            } else {
                c
            }
        }
        (None, SuiteKind::Default) => SuiteConfig::default().with_seed(seed),
        (None, SuiteKind::Confusion) => SuiteConfig::propagation_confusion(20, seed),
    };
    if let Some(n) = a.scenarios {
        cfg.scenarios = n;
    }
    if let Some(n) = a.services {
        cfg.topology.services = n;
    }
    let plan = plan_suite(&cfg)?;
    let manifests = plan.write_to(&a.out)?;
    println!(
        "wrote {} scenarios over {} services to {}",
        manifests.len(),
        plan.topology.services.len(),
        a.out.display()
    );
    Ok(())
}

/// Case directories under `dir` that hold a manifest, in name order.
fn case_dirs(dir: &Path) -> Result<Vec<(String, Manifest)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let m = path.join(MANIFEST_FILE);
        if path.is_dir() && m.exists() {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((name, read_manifest(&m)?));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    if out.is_empty() {
        bail!("no case directories with {MANIFEST_FILE} under {}", dir.display());
    }
    Ok(out)
}

fn run_case(
    dir: &Path,
    manifest: &Manifest,
    arm: RunArm,
    opts: &DiagnoseOptions<'_>,
) -> Result<Option<DiagnosisReport>> {
    let (telemetry, dep) = load_telemetry(&TelemetryPaths::in_dir(dir), &manifest.window)?;
    let mut oracle = Oracle::deterministic().without_transcript();
    let d = match arm {
        RunArm::Pipeline => diagnose(&telemetry, &dep, manifest.window, opts, &mut oracle)?,
        RunArm::Baseline => baseline_single_shot(&telemetry, manifest.window, opts, &mut oracle),
    };
    Ok(match d {
        Diagnosis::Report(r) => Some(*r),
        Diagnosis::NoAlarms(_) => None,
    })
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cases = case_dirs(&a.manifests)?;
    let reports = a.reports.clone().unwrap_or_else(|| a.manifests.clone());
    if let Some(arm) = a.run {
        let detector = DetectorConfig::default();
        let kb = load_kb(a.kb.as_deref())?;
        let mut mcts = rootscope_core::mcts::MctsConfig::default();
        if let Some(n) = a.iterations {
            mcts.iterations = n;
        }
        let opts = DiagnoseOptions {
            detector: &detector,
            kb: &kb,
            mcts: &mcts,
            top_k: 5,
            tau: 0.8,
        };
        for (name, manifest) in &cases {
            let out = reports.join(name);
            let _ = fs::remove_file(out.join(REPORT_JSON));
            if let Some(r) = run_case(&a.manifests.join(name), manifest, arm, &opts)? {
                write_report(&out, &r)?;
            }
        }
    }
    let mut outcomes = Vec::with_capacity(cases.len());
    let mut manifests = Vec::with_capacity(cases.len());
    for (name, manifest) in cases {
        let p = reports.join(&name).join(REPORT_JSON);
        let outcome = if p.exists() {
            let text = fs::read_to_string(&p)?;
            let r: DiagnosisReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Outcome::from(&r)
        } else {
            warn!(case = %name, "no report; counted as a miss");
            Outcome::default()
        };
        outcomes.push(outcome);
        manifests.push(manifest);
    }
    let result = evaluate(&outcomes, &manifests).map_err(|e| anyhow!(e))?;
    println!("{result}");
    if let Some(p) = a.out {
        fs::write(&p, serde_json::to_string_pretty(&result)? + "\n")?;
    }
    Ok(())
}

fn cmd_kb(c: KbCommand) -> Result<()> {
    match c {
        KbCommand::AddCase {
            report,
            confirm,
            solution,
            kb,
        } => {
            if !confirm {
                bail!("refusing to store an unreviewed diagnosis; pass --confirm after checking it");
            }
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let r: DiagnosisReport =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", report.display()))?;
            let mut base = KnowledgeBase::load_or_default(&kb)?;
            let id = base.add_case(&r, true, &solution)?;
            base.save(&kb)?;
            println!("stored {id} in {}", kb.display());
        }
        KbCommand::List { kb } => {
            let base = KnowledgeBase::load_or_default(&kb)?;
            if base.cases.is_empty() {
                println!("no cases in {}", kb.display());
            }
            for c in &base.cases {
                let pod = c
                    .root_cause_pod
                    .as_deref()
                    .map(|p| format!(" pod {p}"))
                    .unwrap_or_default();
                println!(
                    "{}  {}{pod}  {}  {} services{}",
                    c.case_id,
                    c.root_cause_service,
                    c.fault_type,
                    c.per_service.len(),
                    if c.solution.is_empty() {
                        String::new()
                    } else {
                        format!("  fix: {}", c.solution)
                    }
                );
            }
        }
    }
    Ok(())
}
