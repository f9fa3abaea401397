//! Telemetry-backed evidence mining and the end-to-end diagnosis.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::alarm::{scan_alarms, AlarmScan};
use crate::config::{DetectorConfig, TelemetryPaths};
use crate::detect::{
    detect_residual_anomalies, detect_trace_anomalies, fit_forecaster, multivariate_check, sort_findings,
    AnomalyFinding, ForecasterCache, MultivariateVerdict, Severity,
};
use crate::evidence::{EvidenceSource, ServiceEvidence};
use crate::graph::{build_fault_mining_tree, extract_alarm_topology, GraphError};
use crate::kb::KnowledgeBase;
use crate::logmine::{drain_parse, select_templates, summarize_log_evidence, KbPatterns, StageMode};
use crate::mcts::{self, Agents, DiagnosisReport, IngestionCounts, MctsConfig, MctsError};
use crate::oracle::Oracle;
use crate::telemetry::{
    dependency_from_spans, load_logs, load_metrics, load_spans, DependencyGraph, MetricSeries, PodId, PodMapper,
    ServiceId, Telemetry, TelemetryError, TimeWindow,
};
use crate::verdict::{default_taxonomy, TaxonomyEntry};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Search(#[from] MctsError),
}

/// Loads every configured telemetry file over the alarm window and the
/// equally long training window before it.
pub fn load_telemetry(
    paths: &TelemetryPaths,
    window: &TimeWindow,
) -> Result<(Telemetry, DependencyGraph), TelemetryError> {
    let span = window.preceding().union(window);
    let mapper = match &paths.pod_map {
        Some(p) => PodMapper::load(p)?,
        None => PodMapper::default(),
    };
    let mut t = Telemetry::default();
    if let Some(p) = &paths.metrics {
        let l = load_metrics(p, &span, &mapper)?;
        t.metrics = l.items;
        t.dropped_metric_rows = l.dropped_rows;
    }
    if let Some(p) = &paths.logs {
        let l = load_logs(p, &span, &mapper)?;
        t.logs = l.items;
        t.dropped_log_rows = l.dropped_rows;
    }
    if let Some(p) = &paths.spans {
        let l = load_spans(p, &span)?;
        t.spans = l.items;
        t.dropped_span_rows = l.dropped_rows;
    }
    let dep = match &paths.topology {
        Some(p) => DependencyGraph::load_topology(p)?,
        None => dependency_from_spans(&t.spans),
    };
    Ok((t, dep))
}

/// Mines metric, trace and log evidence for one service at a time.
pub struct TelemetryMiner<'a> {
    telemetry: &'a Telemetry,
    window: TimeWindow,
    train: TimeWindow,
    cfg: &'a DetectorConfig,
    kb: &'a KnowledgeBase,
    trace: Option<BTreeMap<ServiceId, Vec<AnomalyFinding>>>,
    trace_skipped: usize,
    /// Services mined so far, in order.
    pub mined: Vec<ServiceId>,
}

impl<'a> TelemetryMiner<'a> {
    pub fn new(telemetry: &'a Telemetry, window: TimeWindow, cfg: &'a DetectorConfig, kb: &'a KnowledgeBase) -> Self {
        Self {
            telemetry,
            window,
            train: window.preceding(),
            cfg,
            kb,
            trace: None,
            trace_skipped: 0,
            mined: Vec::new(),
        }
    }

    fn trace_findings(&mut self) -> &BTreeMap<ServiceId, Vec<AnomalyFinding>> {
        if self.trace.is_none() {
            let spans: Vec<_> = self.telemetry.spans.iter().collect();
            let mut cache = ForecasterCache::new();
            let out = detect_trace_anomalies(&spans, &self.train, &self.window, &mut cache, &self.cfg.trace_config());
            let mut by: BTreeMap<ServiceId, Vec<AnomalyFinding>> = BTreeMap::new();
            for f in out.findings {
                by.entry(f.service.clone()).or_default().push(f);
            }
            self.trace_skipped = out.skipped_edges;
            self.trace = Some(by);
        }
        self.trace.as_ref().expect("set above")
    }

    fn metric_findings(&self, series: &MetricSeries, flags: &mut Vec<String>) -> Vec<AnomalyFinding> {
        let history: Vec<f64> = series.points_in(&self.train).iter().map(|p| p.value).collect();
        let fitted = fit_forecaster(&history, &self.cfg.forecast()).or_else(|e| match self.cfg.fallback_forecast() {
            Some(fb) => fit_forecaster(&history, &fb),
            None => Err(e),
        });
        match fitted {
            Ok(f) => detect_residual_anomalies(series, &self.window, &f, &self.cfg.detector_for(&series.metric_name)),
            Err(e) => {
                let pod = series.pod.as_ref().map_or("-", |p| p.as_str());
                flags.push(format!("{} on {pod} skipped: {e}", series.metric_name));
                Vec::new()
            }
        }
    }

    fn multivariate(&self, service: &ServiceId, flags: &mut Vec<String>) {
        let mut by_pod: BTreeMap<&PodId, Vec<MetricSeries>> = BTreeMap::new();
        let span = self.train.union(&self.window);
        for s in self.telemetry.metrics.iter().filter(|s| s.service == *service) {
            if let Some(p) = &s.pod {
                by_pod.entry(p).or_default().push(MetricSeries {
                    points: s.points_in(&span).to_vec(),
                    ..s.clone()
                });
            }
        }
        for (pod, series) in by_pod {
            let train_len = series[0].points_in(&self.train).len();
            let det = self.cfg.multivariate_detector(train_len);
            match multivariate_check(&series, &det) {
                Ok(MultivariateVerdict::AnomalyExisting) => {
                    flags.push(format!("pod {pod}: joint metric anomaly existing"))
                }
                Ok(MultivariateVerdict::AnomalyUnexisting) => {}
                Err(e) => flags.push(format!("pod {pod}: joint metric check skipped: {e}")),
            }
        }
    }

    /// Pods that reported before the window and fall quiet inside it for at
    /// least `silence_secs` (window edges count as gap boundaries).
    fn silent_pods(&self, service: &ServiceId) -> BTreeSet<PodId> {
        let mut before: BTreeSet<&PodId> = BTreeSet::new();
        let mut inside: BTreeMap<&PodId, Vec<f64>> = BTreeMap::new();
        let mut note = |pod: &'a PodId, t: f64| {
            if self.train.contains(t) {
                before.insert(pod);
            } else if self.window.contains(t) {
                inside.entry(pod).or_default().push(t);
            }
        };
        for s in self.telemetry.metrics.iter().filter(|s| s.service == *service) {
            if let Some(p) = &s.pod {
                for pt in &s.points {
                    note(p, pt.timestamp);
                }
            }
        }
        for l in self.telemetry.logs.iter().filter(|l| l.service == *service) {
            note(&l.pod, l.timestamp);
        }
        let gap = self.cfg.silence_secs;
        before
            .into_iter()
            .filter(|p| {
                let mut ts = inside.remove(p).unwrap_or_default();
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                let mut prev = self.window.start;
                for t in ts.iter().copied().chain([self.window.end]) {
                    if t - prev >= gap {
                        return true;
                    }
                    prev = t;
                }
                false
            })
            .cloned()
            .collect()
    }
}

impl EvidenceSource for TelemetryMiner<'_> {
    fn mine(&mut self, service: &ServiceId, oracle: &mut Oracle) -> ServiceEvidence {
        self.mined.push(service.clone());
        let mut ev = ServiceEvidence::empty(service.clone());
        let mut flags = Vec::new();

        for s in self.telemetry.metrics.iter().filter(|s| s.service == *service) {
            let found = self.metric_findings(s, &mut flags);
            ev.findings.extend(found);
        }
        if self.cfg.multivariate.enabled {
            self.multivariate(service, &mut flags);
        }
        if let Some(t) = self.trace_findings().get(service) {
            ev.findings.extend(t.iter().cloned());
        }

        let records: Vec<_> = self
            .telemetry
            .logs
            .iter()
            .filter(|l| l.service == *service && self.window.contains(l.timestamp))
            .collect();
        if !records.is_empty() {
            let messages: Vec<&str> = records.iter().map(|r| r.message.as_str()).collect();
            let parsed = drain_parse(&messages, &self.cfg.logs.drain);
            let kb = KbPatterns {
                anomalous: &self.kb.anomalous_templates,
                normal: &self.kb.normal_templates,
            };
            let sel = select_templates(&parsed.templates, &self.cfg.logs, kb);
            if sel.degraded {
                flags.push("log clustering bypassed: too few templates".into());
            }
            if sel.mode != StageMode::None {
                flags.push(format!("log templates reduced by {:?}", sel.mode));
            }
            let assignment: Vec<&str> = parsed.assignment.iter().map(String::as_str).collect();
            let logs = summarize_log_evidence(
                service,
                None,
                &records,
                &assignment,
                &sel.retained,
                &self.cfg.logs,
                oracle,
            );
            ev.findings.extend(logs.findings);
            ev.log_summary = logs.summary;
            flags.extend(logs.flags);
        } else {
            ev.log_summary = crate::logmine::NO_ABNORMAL_LOGS.into();
        }

        ev.silent_pods = self.silent_pods(service);
        cap_findings(&mut ev.findings, self.cfg.e_max, &mut flags);
        ev.flags = flags;
        ev
    }
}

/// Keeps at most `cap` findings, SEVERE ones first, then restores the
/// canonical order.
pub fn cap_findings(findings: &mut Vec<AnomalyFinding>, cap: usize, flags: &mut Vec<String>) {
    sort_findings(findings);
    if findings.len() <= cap {
        return;
    }
    let total = findings.len();
    findings.sort_by_key(|f| f.severity != Severity::Severe);
    findings.truncate(cap);
    sort_findings(findings);
    flags.push(format!("evidence capped at {cap} of {total} findings"));
}

/// Everything a diagnosis needs besides the telemetry.
pub struct DiagnoseOptions<'a> {
    pub detector: &'a DetectorConfig,
    pub kb: &'a KnowledgeBase,
    pub mcts: &'a MctsConfig,
    pub top_k: usize,
    pub tau: f64,
}

pub enum Diagnosis {
    NoAlarms(AlarmScan),
    Report(Box<DiagnosisReport>),
}

impl Diagnosis {
    pub fn report(&self) -> Option<&DiagnosisReport> {
        match self {
            Diagnosis::Report(r) => Some(r),
            Diagnosis::NoAlarms(_) => None,
        }
    }
}

pub fn taxonomy_of(kb: &KnowledgeBase) -> Vec<TaxonomyEntry> {
    kb.taxonomy.clone().unwrap_or_else(default_taxonomy)
}

/// Adds every service seen in telemetry so alarmed services without calls
/// still appear in the graph.
pub fn complete_graph(dep: &DependencyGraph, telemetry: &Telemetry) -> DependencyGraph {
    let mut g = dep.clone();
    for s in telemetry
        .metrics
        .iter()
        .map(|m| &m.service)
        .chain(telemetry.logs.iter().map(|l| &l.service))
        .chain(telemetry.spans.iter().map(|s| &s.callee))
    {
        if !g.contains(s) {
            g.add_node(s.clone());
        }
    }
    g
}

/// Alarm scan, then (when triggered) topology extraction, tree building
/// and the search.
pub fn diagnose(
    telemetry: &Telemetry,
    dep: &DependencyGraph,
    window: TimeWindow,
    opts: &DiagnoseOptions<'_>,
    oracle: &mut Oracle,
) -> Result<Diagnosis, PipelineError> {
    let scan = scan_alarms(
        &telemetry.logs,
        &telemetry.metrics,
        &telemetry.spans,
        &window,
        &opts.detector.alarm,
    );
    if !scan.trigger {
        return Ok(Diagnosis::NoAlarms(scan));
    }
    let dep = complete_graph(dep, telemetry);
    let apg = extract_alarm_topology(&dep, &scan.alarmed)?;
    let tree = build_fault_mining_tree(&apg)?;
    let taxonomy = taxonomy_of(opts.kb);
    let mut miner = TelemetryMiner::new(telemetry, window, opts.detector, opts.kb);
    let agents = Agents {
        evidence: &mut miner,
        oracle,
        kb: opts.kb,
        rules: &opts.kb.rules,
        taxonomy: &taxonomy,
        tau: opts.tau,
        top_k: opts.top_k,
    };
    let mut report = mcts::run(&tree, opts.mcts, agents)?;
    if miner.trace_skipped > 0 {
        report
            .flags
            .push(format!("{} call edges lacked latency history", miner.trace_skipped));
    }
    report.window = Some(window);
    report.ingestion = Some(IngestionCounts {
        metric_series: telemetry.metrics.len(),
        log_records: telemetry.logs.len(),
        spans: telemetry.spans.len(),
        dropped_metric_rows: telemetry.dropped_metric_rows,
        dropped_log_rows: telemetry.dropped_log_rows,
        dropped_span_rows: telemetry.dropped_span_rows,
    });
    report.report_id = report.compute_id();
    Ok(Diagnosis::Report(Box::new(report)))
}
