//! Scoring rules for sibling ranking, rollout reward, fault-type ranking and
//! pod/service granularity, plus their oracle-backed entry points.

use std::collections::{BTreeMap, BTreeSet};

use glob::{MatchOptions, Pattern};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{AnomalyFinding, FindingKind, FindingSource, Severity};
use crate::evidence::ServiceEvidence;
use crate::oracle::{parse_marked, prompts, Oracle};
use crate::telemetry::{PodId, ServiceId};

pub const MIN_CHILD_SCORE: u8 = 1;
pub const MAX_CHILD_SCORE: u8 = 8;
pub const MARGIN: u8 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum VerdictError {
    #[error("no children to score")]
    NoChildren,
    #[error("invalid rule `{0}`: {1}")]
    Rule(String, String),
}

const GLOB_OPTS: MatchOptions = MatchOptions {
    case_sensitive: false,
    require_literal_separator: false,
    require_literal_leading_dot: false,
};

pub fn glob_match(pattern: &str, text: &str) -> bool {
    Pattern::new(pattern)
        .map(|p| p.matches_with(text, GLOB_OPTS))
        .unwrap_or(false)
}

/// A weighted predicate over findings. Unset fields match anything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertRule {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<FindingSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<FindingKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub weight: f64,
    #[serde(default)]
    pub note: String,
}

impl ExpertRule {
    pub fn validate(&self) -> Result<(), VerdictError> {
        if !self.weight.is_finite() {
            return Err(VerdictError::Rule(self.id.clone(), "weight must be finite".into()));
        }
        if let Some(s) = &self.subject {
            Pattern::new(s).map_err(|e| VerdictError::Rule(self.id.clone(), e.to_string()))?;
        }
        Ok(())
    }

    pub fn matches(&self, f: &AnomalyFinding) -> bool {
        self.source.is_none_or(|s| s == f.source)
            && self.kind.is_none_or(|k| k == f.kind)
            && self.severity.is_none_or(|s| s == f.severity)
            && self.subject.as_deref().is_none_or(|g| glob_match(g, &f.subject))
    }
}

pub fn validate_rules(rules: &[ExpertRule]) -> Result<(), VerdictError> {
    let mut seen = BTreeSet::new();
    for r in rules {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(VerdictError::Rule(r.id.clone(), "duplicate id".into()));
        }
    }
    Ok(())
}

fn is_metric_side(f: &AnomalyFinding) -> bool {
    matches!(f.source, FindingSource::Metric | FindingSource::Trace)
}

/// Unclamped severity score of one service's findings. Each rule counts once
/// when any finding satisfies it.
pub fn raw_score(findings: &[AnomalyFinding], rules: &[ExpertRule]) -> f64 {
    let metric = findings.iter().any(is_metric_side);
    let log = findings.iter().any(|f| f.source == FindingSource::Log);
    let volume = (findings.len() / 5).min(2) as f64;
    let rules: f64 = rules
        .iter()
        .filter(|r| findings.iter().any(|f| r.matches(f)))
        .map(|r| r.weight)
        .sum();
    1.0 + if metric { 2.0 } else { 0.0 }
        + if log { 2.0 } else { 0.0 }
        + if metric && log { 1.0 } else { 0.0 }
        + volume
        + rules
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildScoreSet {
    pub scores: BTreeMap<ServiceId, u8>,
    pub raw: BTreeMap<ServiceId, f64>,
    pub best: ServiceId,
    pub rationale: BTreeMap<ServiceId, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ChildScoreSet {
    pub fn best_score(&self) -> u8 {
        self.scores[&self.best]
    }
}

fn clamp_score(x: f64) -> u8 {
    if x.is_nan() {
        return MIN_CHILD_SCORE;
    }
    x.round().clamp(MIN_CHILD_SCORE as f64, MAX_CHILD_SCORE as f64) as u8
}

/// Picks the best service on the unclamped values (ties to the smaller id),
/// clamps to the score range and widens the gap to the runner-up to at
/// least [`MARGIN`].
pub fn finalize_scores(raw: &BTreeMap<ServiceId, f64>) -> Option<(BTreeMap<ServiceId, u8>, ServiceId)> {
    let mut best: Option<(&ServiceId, f64)> = None;
    for (s, &v) in raw {
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((s, v));
        }
    }
    let best = best?.0.clone();
    let mut scores: BTreeMap<ServiceId, u8> = raw.iter().map(|(s, v)| (s.clone(), clamp_score(*v))).collect();
    if scores.len() >= 2 {
        let second = scores
            .iter()
            .filter(|(s, _)| **s != best)
            .map(|(_, v)| *v)
            .max()
            .unwrap_or(MIN_CHILD_SCORE);
        let b = scores[&best].max(second + MARGIN).min(MAX_CHILD_SCORE);
        for (s, v) in scores.iter_mut() {
            if *s == best {
                *v = b;
            } else {
                *v = (*v).min(b - MARGIN);
            }
        }
    }
    Some((scores, best))
}

fn rationale(findings: &[AnomalyFinding]) -> String {
    let by_source = |src| findings.iter().filter(|f| f.source == src).count();
    format!(
        "{} metric, {} trace, {} log findings",
        by_source(FindingSource::Metric),
        by_source(FindingSource::Trace),
        by_source(FindingSource::Log)
    )
}

/// Ranks sibling services by the severity of their evidence.
pub fn score_children(
    evidence: &BTreeMap<ServiceId, Vec<AnomalyFinding>>,
    rules: &[ExpertRule],
) -> Result<ChildScoreSet, VerdictError> {
    let raw: BTreeMap<ServiceId, f64> = evidence.iter().map(|(s, f)| (s.clone(), raw_score(f, rules))).collect();
    let mut set = from_raw(raw).ok_or(VerdictError::NoChildren)?;
    set.rationale = evidence.iter().map(|(s, f)| (s.clone(), rationale(f))).collect();
    if evidence.values().all(|f| f.is_empty()) {
        set.flags.push("no evidence".into());
    }
    Ok(set)
}

fn from_raw(raw: BTreeMap<ServiceId, f64>) -> Option<ChildScoreSet> {
    let (scores, best) = finalize_scores(&raw)?;
    Some(ChildScoreSet {
        scores,
        raw,
        best,
        rationale: BTreeMap::new(),
        flags: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationScore {
    pub s: u8,
    pub r: f64,
    pub own: usize,
    pub caller_counts: BTreeMap<ServiceId, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl SimulationScore {
    pub fn from_s(s: u8, own: usize, caller_counts: BTreeMap<ServiceId, usize>) -> Self {
        let s = s.clamp(1, 10);
        Self {
            s,
            r: f64::from(s) / 10.0,
            own,
            caller_counts,
            flags: Vec::new(),
        }
    }
}

pub fn simulation_s(own: usize, caller_total: usize) -> u8 {
    (1 + own.min(4) + caller_total.min(5)).clamp(1, 10) as u8
}

/// One-step rollout value from the node's own finding count and its callers'.
pub fn score_simulation(own: usize, callers: &BTreeMap<ServiceId, usize>) -> SimulationScore {
    let total: usize = callers.values().sum();
    SimulationScore::from_s(simulation_s(own, total), own, callers.clone())
}

/// Maps findings to a fault family. Subject globs apply to metric findings;
/// `kinds` apply to any source. With `needs_silent_pod` the entry only
/// matches when the service has a silent pod.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyEntry {
    pub label: String,
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default)]
    pub kinds: Vec<FindingKind>,
    #[serde(default)]
    pub needs_silent_pod: bool,
}

impl TaxonomyEntry {
    pub fn matches(&self, f: &AnomalyFinding, has_silent_pod: bool) -> bool {
        if self.needs_silent_pod && !has_silent_pod {
            return false;
        }
        let by_subject = f.source == FindingSource::Metric && self.subjects.iter().any(|g| glob_match(g, &f.subject));
        by_subject || self.kinds.contains(&f.kind)
    }
}

pub const UNKNOWN_FAULT: &str = "Unknown";
pub const CPU_LABEL: &str = "CPU problem";
pub const MEMORY_LABEL: &str = "Memory problem";
pub const NETWORK_LABEL: &str = "Network problem";
pub const DISK_LABEL: &str = "File system I/O";
pub const PAUSE_LABEL: &str = "Process Pause";

pub fn default_taxonomy() -> Vec<TaxonomyEntry> {
    let entry = |label: &str, subjects: &[&str], kinds: &[FindingKind], silent| TaxonomyEntry {
        label: label.into(),
        subjects: subjects.iter().map(|s| s.to_string()).collect(),
        kinds: kinds.to_vec(),
        needs_silent_pod: silent,
    };
    vec![
        entry(CPU_LABEL, &["*cpu*"], &[], false),
        entry(MEMORY_LABEL, &["*memory*", "*oom*"], &[], false),
        entry(NETWORK_LABEL, &["*network*"], &[FindingKind::LatencySpike], false),
        entry(DISK_LABEL, &["*io*", "*disk*", "*fs*"], &[], false),
        entry(PAUSE_LABEL, &[], &[FindingKind::CallFailure], true),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultTypeEntry {
    pub label: String,
    pub count: usize,
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultTypeRanking {
    pub entries: Vec<FaultTypeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl FaultTypeRanking {
    pub fn unknown() -> Self {
        Self {
            entries: vec![FaultTypeEntry {
                label: UNKNOWN_FAULT.into(),
                count: 0,
                rationale: "no finding matches the taxonomy".into(),
            }],
            flags: Vec::new(),
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn top(&self) -> &str {
        self.entries.first().map_or(UNKNOWN_FAULT, |e| e.label.as_str())
    }
}

/// Buckets findings by their first matching taxonomy entry and returns the
/// three largest buckets, ties alphabetical.
pub fn classify_fault_type(
    findings: &[AnomalyFinding],
    silent_pods: &BTreeSet<PodId>,
    taxonomy: &[TaxonomyEntry],
) -> FaultTypeRanking {
    let silent = !silent_pods.is_empty();
    let mut buckets: BTreeMap<&str, BTreeMap<FindingKind, usize>> = BTreeMap::new();
    for f in findings {
        if let Some(e) = taxonomy.iter().find(|e| e.matches(f, silent)) {
            *buckets.entry(&e.label).or_default().entry(f.kind).or_default() += 1;
        }
    }
    let mut ranked: Vec<FaultTypeEntry> = buckets
        .into_iter()
        .map(|(label, kinds)| FaultTypeEntry {
            label: label.to_string(),
            count: kinds.values().sum(),
            rationale: kinds
                .iter()
                .map(|(k, n)| format!("{n}×{k}"))
                .collect::<Vec<_>>()
                .join(", "),
        })
        .collect();
    ranked.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    ranked.truncate(3);
    if ranked.is_empty() {
        return FaultTypeRanking::unknown();
    }
    FaultTypeRanking {
        entries: ranked,
        flags: Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "level", content = "pod", rename_all = "UPPERCASE")]
pub enum Granularity {
    Pod(PodId),
    Service,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GranularityDecision {
    pub granularity: Granularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// POD when exactly one pod carries findings (silent pods count as
/// carrying them), SERVICE otherwise.
pub fn refine_granularity(findings: &[AnomalyFinding], silent_pods: &BTreeSet<PodId>) -> GranularityDecision {
    let pods: BTreeSet<&PodId> = findings
        .iter()
        .filter_map(|f| f.pod.as_ref())
        .chain(silent_pods.iter())
        .collect();
    match pods.len() {
        0 => GranularityDecision {
            granularity: Granularity::Service,
            flag: Some("no pod attribution".into()),
        },
        1 => GranularityDecision {
            granularity: Granularity::Pod(pods.into_iter().next().unwrap().clone()),
            flag: None,
        },
        _ => GranularityDecision {
            granularity: Granularity::Service,
            flag: None,
        },
    }
}

/// Sibling ranking through the oracle. Unusable replies fall back to the
/// rule formula and are flagged.
pub fn verify_children(
    oracle: &mut Oracle,
    parent: Option<&ServiceId>,
    children: &[&ServiceEvidence],
    rules: &[ExpertRule],
) -> Result<ChildScoreSet, VerdictError> {
    if children.is_empty() {
        return Err(VerdictError::NoChildren);
    }
    let by_service: BTreeMap<ServiceId, Vec<AnomalyFinding>> = children
        .iter()
        .map(|e| (e.service.clone(), e.findings.clone()))
        .collect();
    let msgs = prompts::verifier(parent, children, rules);
    let parsed = oracle
        .complete("verifier", &msgs)
        .map_err(|e| e.to_string())
        .and_then(|reply| parse_scores(&reply, &by_service));
    let mut set = match parsed {
        Ok(raw) => {
            let mut set = from_raw(raw).ok_or(VerdictError::NoChildren)?;
            set.rationale = by_service.iter().map(|(s, f)| (s.clone(), rationale(f))).collect();
            if by_service.values().all(|f| f.is_empty()) {
                set.flags.push("no evidence".into());
            }
            set
        }
        Err(why) => {
            let mut set = score_children(&by_service, rules)?;
            set.flags
                .push(format!("verifier reply unusable ({why}); rule scores used"));
            set
        }
    };
    set.flags.dedup();
    Ok(set)
}

fn parse_scores(
    reply: &str,
    expected: &BTreeMap<ServiceId, Vec<AnomalyFinding>>,
) -> Result<BTreeMap<ServiceId, f64>, String> {
    let names = parse_marked(reply, prompts::SERVICE_START, prompts::SERVICE_END);
    let scores = parse_marked(reply, prompts::SCORE_START, prompts::SCORE_END);
    if names.len() != scores.len() {
        return Err(format!("{} services but {} scores", names.len(), scores.len()));
    }
    let mut out = BTreeMap::new();
    for (n, s) in names.iter().zip(&scores) {
        let svc = ServiceId::new(n.as_str());
        if !expected.contains_key(&svc) {
            return Err(format!("unexpected service `{n}`"));
        }
        let v: f64 = s.parse().map_err(|_| format!("bad score `{s}`"))?;
        out.insert(svc, v);
    }
    if out.len() != expected.len() {
        return Err("not every candidate was scored".into());
    }
    Ok(out)
}

/// Rollout value of `node` given its callers' evidence, through the oracle.
pub fn simulate_with_oracle(
    oracle: &mut Oracle,
    node: &ServiceEvidence,
    callers: &[&ServiceEvidence],
) -> SimulationScore {
    let counts: BTreeMap<ServiceId, usize> = callers.iter().map(|c| (c.service.clone(), c.count())).collect();
    let fallback = score_simulation(node.count(), &counts);
    let msgs = prompts::simulation(node, callers);
    let reply = match oracle.complete("simulate", &msgs) {
        Ok(r) => r,
        Err(e) => return flagged(fallback, format!("simulation call failed ({e})")),
    };
    let parsed = parse_marked(&reply, prompts::SCORE_START, prompts::SCORE_END)
        .first()
        .and_then(|s| s.parse::<f64>().ok());
    match parsed {
        Some(s) if s.is_finite() => SimulationScore::from_s(s.round().clamp(1.0, 10.0) as u8, node.count(), counts),
        _ => flagged(fallback, "simulation reply unusable; rule score used".into()),
    }
}

fn flagged(mut s: SimulationScore, why: String) -> SimulationScore {
    s.flags.push(why);
    s
}

/// Fault-type ranking through the oracle, falling back to the rule ranking
/// when the reply does not parse into known labels.
pub fn rank_fault_types(oracle: &mut Oracle, root: &ServiceEvidence, taxonomy: &[TaxonomyEntry]) -> FaultTypeRanking {
    let fallback = classify_fault_type(&root.findings, &root.silent_pods, taxonomy);
    let msgs = prompts::fault_type(root, taxonomy);
    let reply = match oracle.complete("fault-type", &msgs) {
        Ok(r) => r,
        Err(e) => {
            let mut f = fallback;
            f.flags.push(format!("fault-type call failed ({e})"));
            return f;
        }
    };
    match parse_fault_types(&reply, taxonomy, &fallback) {
        Some(r) => r,
        None => {
            let mut f = fallback;
            f.flags.push("fault-type reply unusable; rule ranking used".into());
            f
        }
    }
}

fn parse_fault_types(reply: &str, taxonomy: &[TaxonomyEntry], fallback: &FaultTypeRanking) -> Option<FaultTypeRanking> {
    let blocks = parse_marked(reply, prompts::TYPE_START, prompts::TYPE_END);
    if blocks.is_empty() {
        return None;
    }
    let mut entries = Vec::new();
    for b in blocks.iter().take(3) {
        let (label, count) = match b.rsplit_once('|') {
            Some((l, c)) => (l.trim(), c.trim().parse::<usize>().ok()?),
            None => (b.trim(), 0),
        };
        let known = label == UNKNOWN_FAULT || taxonomy.iter().any(|t| t.label == label);
        if !known {
            return None;
        }
        let rationale = fallback
            .entries
            .iter()
            .find(|e| e.label == label)
            .map(|e| e.rationale.clone())
            .unwrap_or_default();
        entries.push(FaultTypeEntry {
            label: label.to_string(),
            count,
            rationale,
        });
    }
    Some(FaultTypeRanking {
        entries,
        flags: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn finding(
        source: FindingSource,
        kind: FindingKind,
        subject: &str,
        pod: Option<&str>,
    ) -> AnomalyFinding {
        AnomalyFinding {
            timestamp: 0.0,
            service: "svc".into(),
            pod: pod.map(PodId::from),
            source,
            kind,
            subject: subject.into(),
            severity: Severity::Warning,
            detail: String::new(),
            observation: None,
        }
    }

    fn metric(subject: &str) -> AnomalyFinding {
        finding(FindingSource::Metric, FindingKind::Spike, subject, Some("svc-0"))
    }

    fn log() -> AnomalyFinding {
        finding(FindingSource::Log, FindingKind::ErrorLog, "abc", Some("svc-0"))
    }

    fn ev(pairs: &[(&str, Vec<AnomalyFinding>)]) -> BTreeMap<ServiceId, Vec<AnomalyFinding>> {
        pairs.iter().map(|(s, f)| (ServiceId::from(*s), f.clone())).collect()
    }

    #[test]
    fn rich_child_beats_sparse_child() {
        let e = ev(&[
            ("A", vec![metric("cpu"), metric("cpu"), metric("cpu"), log(), log()]),
            ("B", vec![log()]),
        ]);
        let s = score_children(&e, &[]).unwrap();
        assert_eq!(s.raw[&ServiceId::from("A")], 7.0);
        assert_eq!(s.raw[&ServiceId::from("B")], 3.0);
        assert_eq!(s.best.as_str(), "A");
        assert_eq!(s.scores[&ServiceId::from("A")], 7);
        assert_eq!(s.scores[&ServiceId::from("B")], 3);
    }

    #[test]
    fn empty_children_tie_break() {
        let s = score_children(&ev(&[("B", vec![]), ("A", vec![])]), &[]).unwrap();
        assert_eq!(s.best.as_str(), "A");
        assert_eq!(s.scores[&ServiceId::from("A")], 3);
        assert_eq!(s.scores[&ServiceId::from("B")], 1);
        assert_eq!(s.flags, vec!["no evidence"]);
    }

    #[test]
    fn equal_raw_margin() {
        let raw: BTreeMap<ServiceId, f64> = [("A".into(), 5.0), ("B".into(), 5.0)].into_iter().collect();
        let (scores, best) = finalize_scores(&raw).unwrap();
        assert_eq!(best.as_str(), "A");
        assert_eq!(scores[&ServiceId::from("A")], 7);
        assert_eq!(scores[&ServiceId::from("B")], 5);
    }

    #[test]
    fn margin_at_ceiling_lowers_others() {
        let raw: BTreeMap<ServiceId, f64> = [("A".into(), 9.0), ("B".into(), 8.5)].into_iter().collect();
        let (scores, best) = finalize_scores(&raw).unwrap();
        assert_eq!(best.as_str(), "A");
        assert_eq!(scores[&ServiceId::from("A")], 8);
        assert_eq!(scores[&ServiceId::from("B")], 6);
    }

    #[test]
    fn no_children_is_error() {
        assert_eq!(
            score_children(&BTreeMap::new(), &[]).unwrap_err(),
            VerdictError::NoChildren
        );
    }

    #[test]
    fn rules_add_weight_once() {
        let r = ExpertRule {
            id: "cpu".into(),
            source: Some(FindingSource::Metric),
            kind: None,
            severity: None,
            subject: Some("*cpu*".into()),
            weight: 1.5,
            note: String::new(),
        };
        assert_eq!(
            raw_score(&[metric("cpu_usage"), metric("cpu_usage")], std::slice::from_ref(&r)),
            4.5
        );
        assert_eq!(raw_score(&[metric("memory_usage")], &[r]), 3.0);
    }

    #[test]
    fn simulation_examples() {
        let none = BTreeMap::new();
        let s = score_simulation(0, &none);
        assert_eq!((s.s, s.r), (1, 0.1));
        let callers: BTreeMap<ServiceId, usize> = [("x".into(), 2), ("y".into(), 3)].into_iter().collect();
        let s = score_simulation(6, &callers);
        assert_eq!((s.s, s.r), (10, 1.0));
        let one: BTreeMap<ServiceId, usize> = [("x".into(), 1)].into_iter().collect();
        let s = score_simulation(2, &one);
        assert_eq!((s.s, s.r), (4, 0.4));
    }

    #[test]
    fn fault_type_counts() {
        let mut f: Vec<AnomalyFinding> = (0..10).map(|_| metric("cpu_usage")).collect();
        f.extend((0..2).map(|_| metric("memory_usage")));
        let r = classify_fault_type(&f, &BTreeSet::new(), &default_taxonomy());
        assert_eq!(r.labels(), vec![CPU_LABEL, MEMORY_LABEL]);
        assert_eq!(r.entries[0].count, 10);
    }

    #[test]
    fn fault_type_unknown_and_ties() {
        let r = classify_fault_type(&[], &BTreeSet::new(), &default_taxonomy());
        assert_eq!(r.labels(), vec![UNKNOWN_FAULT]);
        let mut f: Vec<AnomalyFinding> = (0..3).map(|_| metric("memory_usage")).collect();
        f.extend((0..3).map(|_| metric("cpu_usage")));
        let r = classify_fault_type(&f, &BTreeSet::new(), &default_taxonomy());
        assert_eq!(r.labels(), vec![CPU_LABEL, MEMORY_LABEL]);
    }

    #[test]
    fn pause_needs_silent_pod() {
        let cf = finding(FindingSource::Trace, FindingKind::CallFailure, "a→b", None);
        let tax = default_taxonomy();
        assert_eq!(
            classify_fault_type(std::slice::from_ref(&cf), &BTreeSet::new(), &tax).top(),
            UNKNOWN_FAULT
        );
        let silent: BTreeSet<PodId> = [PodId::from("b-0")].into_iter().collect();
        assert_eq!(classify_fault_type(&[cf], &silent, &tax).top(), PAUSE_LABEL);
    }

    #[test]
    fn log_subjects_ignore_globs() {
        // A template id containing "fs" must not count as disk evidence.
        let f = finding(FindingSource::Log, FindingKind::ErrorLog, "fs", None);
        assert_eq!(
            classify_fault_type(&[f], &BTreeSet::new(), &default_taxonomy()).top(),
            UNKNOWN_FAULT
        );
    }

    #[test]
    fn granularity_rules() {
        let on = |p: &str| finding(FindingSource::Metric, FindingKind::Spike, "cpu", Some(p));
        let none = BTreeSet::new();
        assert_eq!(
            refine_granularity(&[on("adservice-0"), on("adservice-0")], &none).granularity,
            Granularity::Pod("adservice-0".into())
        );
        assert_eq!(
            refine_granularity(&[on("adservice-0"), on("adservice-1")], &none).granularity,
            Granularity::Service
        );
        let d = refine_granularity(
            &[finding(FindingSource::Trace, FindingKind::CallFailure, "a→b", None)],
            &none,
        );
        assert_eq!(d.granularity, Granularity::Service);
        assert!(d.flag.is_some());
    }

    #[test]
    fn oracle_path_matches_pure_scoring() {
        let a = ServiceEvidence {
            service: "A".into(),
            findings: vec![metric("cpu_usage"), log()],
            ..Default::default()
        };
        let b = ServiceEvidence {
            service: "B".into(),
            findings: vec![log()],
            ..Default::default()
        };
        let mut o = Oracle::deterministic();
        let via = verify_children(&mut o, None, &[&a, &b], &[]).unwrap();
        let pure = score_children(&ev(&[("A", a.findings.clone()), ("B", b.findings.clone())]), &[]).unwrap();
        assert_eq!(via.scores, pure.scores);
        assert_eq!(via.best, pure.best);
        assert!(via.flags.is_empty(), "{:?}", via.flags);
        let sim = simulate_with_oracle(&mut o, &a, &[&b]);
        assert_eq!(sim.s, simulation_s(2, 1));
        assert!(sim.flags.is_empty());
        let ft = rank_fault_types(&mut o, &a, &default_taxonomy());
        assert_eq!(
            ft,
            classify_fault_type(&a.findings, &a.silent_pods, &default_taxonomy())
        );
        assert_eq!(o.stats().calls, 3);
    }

    fn arb_finding() -> impl Strategy<Value = AnomalyFinding> {
        (0usize..3, 0usize..2).prop_map(|(s, k)| {
            let (src, kind) = match s {
                0 => (FindingSource::Metric, FindingKind::Spike),
                1 => (FindingSource::Log, FindingKind::ErrorLog),
                _ => (FindingSource::Trace, FindingKind::LatencySpike),
            };
            let mut f = finding(src, kind, if k == 0 { "cpu_usage" } else { "x" }, Some("p-0"));
            if k == 1 {
                f.severity = Severity::Severe;
            }
            f
        })
    }

    fn arb_rules() -> impl Strategy<Value = Vec<ExpertRule>> {
        prop::collection::vec((0.0f64..3.0, 0usize..3), 0..4).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (w, m))| ExpertRule {
                    id: format!("r{i}"),
                    source: (m == 0).then_some(FindingSource::Metric),
                    kind: None,
                    severity: (m == 1).then_some(Severity::Severe),
                    subject: (m == 2).then(|| "*cpu*".to_string()),
                    weight: w,
                    note: String::new(),
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn score_bounds_and_margin(
            children in prop::collection::vec(prop::collection::vec(arb_finding(), 0..12), 1..6),
            rules in arb_rules(),
        ) {
            let e: BTreeMap<ServiceId, Vec<AnomalyFinding>> = children
                .into_iter()
                .enumerate()
                .map(|(i, f)| (ServiceId::new(format!("s{i}")), f))
                .collect();
            let set = score_children(&e, &rules).unwrap();
            for v in set.scores.values() {
                prop_assert!((1..=8).contains(v));
            }
            if set.scores.len() >= 2 {
                let b = set.scores[&set.best];
                let other = set.scores.iter().filter(|(s, _)| **s != set.best).map(|(_, v)| *v).max().unwrap();
                prop_assert!(b >= other + 2);
            }
        }

        #[test]
        fn adding_finding_never_lowers_raw(
            base in prop::collection::vec(arb_finding(), 0..12),
            extra in arb_finding(),
            rules in arb_rules(),
        ) {
            let before = raw_score(&base, &rules);
            let mut more = base.clone();
            more.push(extra);
            prop_assert!(raw_score(&more, &rules) >= before);
        }

        #[test]
        fn scaling_rule_weights_keeps_best(
            kinds in prop::collection::vec((any::<bool>(), any::<bool>()), 2..5),
            rules in arb_rules(),
            k in 0.1f64..10.0,
        ) {
            // Every child carries one metric and one log finding, so the base
            // terms agree and only rule weights separate them.
            let e: BTreeMap<ServiceId, Vec<AnomalyFinding>> = kinds
                .iter()
                .enumerate()
                .map(|(i, (cpu, severe))| {
                    let mut m = metric(if *cpu { "cpu_usage" } else { "x" });
                    if *severe {
                        m.severity = Severity::Severe;
                    }
                    (ServiceId::new(format!("s{i}")), vec![m, log()])
                })
                .collect();
            let a = score_children(&e, &rules).unwrap();
            let scaled: Vec<ExpertRule> = rules.iter().map(|r| ExpertRule { weight: r.weight * k, ..r.clone() }).collect();
            let b = score_children(&e, &scaled).unwrap();
            prop_assert_eq!(a.best, b.best);
        }

        #[test]
        fn simulation_bounds(own in 0usize..50, callers in prop::collection::vec(0usize..20, 0..5)) {
            let c: BTreeMap<ServiceId, usize> = callers.iter().enumerate().map(|(i, n)| (ServiceId::new(format!("c{i}")), *n)).collect();
            let s = score_simulation(own, &c);
            prop_assert!((1..=10).contains(&s.s));
            prop_assert_eq!(s.r, f64::from(s.s) / 10.0);
            prop_assert!((0.1..=1.0).contains(&s.r));
        }

        #[test]
        fn fault_type_counts_non_increasing(f in prop::collection::vec(arb_finding(), 0..30)) {
            let r = classify_fault_type(&f, &BTreeSet::new(), &default_taxonomy());
            for w in r.entries.windows(2) {
                prop_assert!(w[0].count >= w[1].count);
            }
            prop_assert!(r.entries.len() <= 3);
        }
    }
}
