//! One-pass comparison arm: every alarmed service is scored in a single
//! verifier call and the argmax is the answer.

use std::collections::BTreeMap;
use std::time::Instant;

use rootscope_core::alarm::scan_alarms;
use rootscope_core::evidence::{EvidenceSource, ServiceEvidence};
use rootscope_core::mcts::{DiagnosisReport, ReportStats, REPORT_SCHEMA_VERSION};
use rootscope_core::oracle::Oracle;
use rootscope_core::pipeline::{taxonomy_of, DiagnoseOptions, Diagnosis, TelemetryMiner};
use rootscope_core::telemetry::{Telemetry, TimeWindow};
use rootscope_core::verdict::{rank_fault_types, refine_granularity, verify_children, Granularity};

pub fn baseline_single_shot(
    telemetry: &Telemetry,
    window: TimeWindow,
    opts: &DiagnoseOptions<'_>,
    oracle: &mut Oracle,
) -> Diagnosis {
    let started = Instant::now();
    let scan = scan_alarms(
        &telemetry.logs,
        &telemetry.metrics,
        &telemetry.spans,
        &window,
        &opts.detector.alarm,
    );
    if !scan.trigger {
        return Diagnosis::NoAlarms(scan);
    }
    let mut miner = TelemetryMiner::new(telemetry, window, opts.detector, opts.kb);
    let evidence: BTreeMap<_, ServiceEvidence> = scan
        .alarmed
        .iter()
        .map(|s| (s.clone(), miner.mine(s, oracle)))
        .collect();
    let all: Vec<&ServiceEvidence> = evidence.values().collect();
    let scores = verify_children(oracle, None, &all, &opts.kb.rules).expect("alarm scan found services");
    let best = &evidence[&scores.best];
    let fault_types = rank_fault_types(oracle, best, &taxonomy_of(opts.kb));
    let g = refine_granularity(&best.findings, &best.silent_pods);
    let pod = match &g.granularity {
        Granularity::Pod(p) => Some(p.clone()),
        Granularity::Service => None,
    };
    let stats = oracle.stats();
    let mut report = DiagnosisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        report_id: String::new(),
        window: Some(window),
        fault_path: vec![scores.best.clone()],
        root_cause_service: Some(scores.best.clone()),
        granularity: Some(g.granularity),
        root_cause_pod: pod,
        fault_types,
        kb_case: None,
        alarmed: scan.alarmed.iter().cloned().collect(),
        tree: None,
        evidence,
        trace: Vec::new(),
        transcripts: oracle.transcript().to_vec(),
        stats: ReportStats {
            oracle_calls: stats.calls,
            max_input_chars: stats.max_input_chars,
            total_input_chars: stats.total_input_chars,
            elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
            iterations_used: 0,
        },
        flags: g.flag.into_iter().chain(scores.flags.iter().cloned()).collect(),
        ingestion: None,
    };
    report.report_id = report.compute_id();
    Diagnosis::Report(Box::new(report))
}
