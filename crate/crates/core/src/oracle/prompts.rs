//! Message builders for every oracle role and the line format they share
//! with the rule engine.

use std::fmt::Write as _;

use crate::detect::{AnomalyFinding, FindingKind, FindingSource, Severity};
use crate::evidence::ServiceEvidence;
use crate::kb::CaseRecord;
use crate::telemetry::{PodId, ServiceId};
use crate::verdict::{ExpertRule, TaxonomyEntry};

use super::ChatMessage;

pub const SERVICE_START: &str = "<root_service_start>";
pub const SERVICE_END: &str = "<root_service_end>";
pub const SCORE_START: &str = "<root_score_start>";
pub const SCORE_END: &str = "<root_score_end>";
pub const CAUSE_START: &str = "<root_cause_start>";
pub const CAUSE_END: &str = "<root_cause_end>";
pub const TYPE_START: &str = "<root_type_start>";
pub const TYPE_END: &str = "<root_type_end>";
pub const MATCH_START: &str = "<match_start>";
pub const MATCH_END: &str = "<match_end>";
pub const SUMMARY_START: &str = "<summary_start>";
pub const SUMMARY_END: &str = "<summary_end>";

pub const MATCH: &str = "MATCH";
pub const NO_MATCH: &str = "NO_MATCH";

pub(crate) const RULES_HEADER: &str = "## Expert rules";
pub(crate) const CANDIDATES_HEADER: &str = "## Candidates";
pub(crate) const NODE_HEADER: &str = "## Node";
pub(crate) const CALLERS_HEADER: &str = "## Callers";
pub(crate) const TAXONOMY_HEADER: &str = "## Taxonomy";
pub(crate) const FINDINGS_HEADER: &str = "## Findings";
pub(crate) const CASE_HEADER: &str = "## Stored case";
pub(crate) const CURRENT_HEADER: &str = "## Current evidence";
pub(crate) const TEMPLATES_HEADER: &str = "## Templates";
pub(crate) const SILENT_PREFIX: &str = "silent pods:";
pub(crate) const SIMILARITY_PREFIX: &str = "similarity:";
pub(crate) const THRESHOLD_PREFIX: &str = "threshold:";
pub(crate) const NO_FINDINGS: &str = "(no findings)";
const ANOMALIES_WORD: &str = "anomalies";

fn no_space(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join("_")
}

/// `- SOURCE KIND SEVERITY subject=<s> pod=<p|-> :: detail`
pub fn finding_line(f: &AnomalyFinding) -> String {
    format!(
        "- {} {} {} subject={} pod={} :: {}",
        f.source,
        f.kind,
        f.severity,
        no_space(&f.subject),
        f.pod.as_ref().map_or("-".to_string(), |p| no_space(p.as_str())),
        f.detail.replace('\n', " ")
    )
}

pub fn parse_finding_line(line: &str, service: &ServiceId) -> Option<AnomalyFinding> {
    let body = line.trim().strip_prefix("- ")?;
    let (head, detail) = body.split_once(" :: ").unwrap_or((body, ""));
    let mut parts = head.split_whitespace();
    let source: FindingSource = parts.next()?.parse().ok()?;
    let kind: FindingKind = parts.next()?.parse().ok()?;
    let severity: Severity = parts.next()?.parse().ok()?;
    let subject = parts.next()?.strip_prefix("subject=")?.to_string();
    let pod = match parts.next()?.strip_prefix("pod=")? {
        "-" => None,
        p => Some(PodId::from(p)),
    };
    Some(AnomalyFinding {
        timestamp: 0.0,
        service: service.clone(),
        pod,
        source,
        kind,
        subject,
        severity,
        detail: detail.to_string(),
        observation: None,
    })
}

fn push_evidence(out: &mut String, e: &ServiceEvidence) {
    let _ = writeln!(out, "### {}", e.service);
    for line in e.log_summary.lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(out, "> {line}");
    }
    if e.findings.is_empty() {
        let _ = writeln!(out, "{NO_FINDINGS}");
    }
    for f in &e.findings {
        let _ = writeln!(out, "{}", finding_line(f));
    }
}

fn push_silent(out: &mut String, pods: impl IntoIterator<Item = impl AsRef<str>>) {
    let list: Vec<String> = pods.into_iter().map(|p| p.as_ref().to_string()).collect();
    let _ = writeln!(
        out,
        "{SILENT_PREFIX} {}",
        if list.is_empty() {
            "none".to_string()
        } else {
            list.join(", ")
        }
    );
}

fn json_line<T: serde::Serialize>(v: &T) -> String {
    format!("- {}", serde_json::to_string(v).unwrap_or_default())
}

/// Sibling ranking request.
pub fn verifier(parent: Option<&ServiceId>, children: &[&ServiceEvidence], rules: &[ExpertRule]) -> Vec<ChatMessage> {
    let system = format!(
        "You are assessing which of several sibling services in a microservice call graph \
         shows the strongest sign of being faulty. Give every candidate an integer from 1 to 8. \
         Candidates whose trouble shows up in both metrics or traces and in logs rank above \
         candidates with a single kind of signal, and more anomaly entries push a score up. \
         Apply any expert rule whose conditions a candidate satisfies. The leading candidate \
         must be ahead of all others by at least 2 points.\n\
         For each candidate answer with its name between {SERVICE_START} and {SERVICE_END}, \
         followed by its score between {SCORE_START} and {SCORE_END}."
    );
    let mut user = String::new();
    let _ = writeln!(
        user,
        "Caller under investigation: {}",
        parent.map_or("(entry point)".to_string(), ToString::to_string)
    );
    let _ = writeln!(user, "{RULES_HEADER}");
    for r in rules {
        let _ = writeln!(user, "{}", json_line(r));
    }
    let _ = writeln!(user, "{CANDIDATES_HEADER}");
    for c in children {
        push_evidence(&mut user, c);
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// One-step rollout value for a node given the services that call it.
pub fn simulation(node: &ServiceEvidence, callers: &[&ServiceEvidence]) -> Vec<ChatMessage> {
    let system = format!(
        "A failing service usually drags down everything that calls it. Judge how likely the \
         node below is the origin of the incident from its own anomalies and from the \
         anomalies of its callers, on an integer scale from 1 to 10. Put the number between \
         {SCORE_START} and {SCORE_END}, then answer yes or no between {CAUSE_START} and \
         {CAUSE_END} for whether the node looks like the origin."
    );
    let mut user = String::new();
    let _ = writeln!(user, "{NODE_HEADER}");
    push_evidence(&mut user, node);
    let _ = writeln!(user, "{CALLERS_HEADER}");
    for c in callers {
        let _ = writeln!(user, "{}", caller_line(c));
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Callers travel as counts only, which keeps the rollout prompt bounded by
/// one service's evidence however many callers there are.
/// `- <service>: <n> anomalies (metric <m>, trace <t>, log <l>)`
pub fn caller_line(e: &ServiceEvidence) -> String {
    let by = |src: FindingSource| e.findings.iter().filter(|f| f.source == src).count();
    format!(
        "- {}: {} {ANOMALIES_WORD} (metric {}, trace {}, log {})",
        e.service,
        e.count(),
        by(FindingSource::Metric),
        by(FindingSource::Trace),
        by(FindingSource::Log)
    )
}

/// Inverse of [`caller_line`]: the service and its total count.
pub fn parse_caller_line(line: &str) -> Option<(ServiceId, usize)> {
    let (name, rest) = line.trim().strip_prefix("- ")?.split_once(": ")?;
    let n = rest.split_whitespace().next()?.parse().ok()?;
    Some((ServiceId::new(name), n))
}

/// Fault-family ranking for the localized service.
pub fn fault_type(root: &ServiceEvidence, taxonomy: &[TaxonomyEntry]) -> Vec<ChatMessage> {
    let system = format!(
        "Decide which fault families best explain the anomalies of the service below. The \
         family backed by the most metric and log entries ranks first. Use only labels from \
         the taxonomy. Give at most three answers, best first, each written as \
         `label | supporting entries` between {TYPE_START} and {TYPE_END}."
    );
    let mut user = String::new();
    let _ = writeln!(user, "Service: {}", root.service);
    let _ = writeln!(user, "{TAXONOMY_HEADER}");
    for t in taxonomy {
        let _ = writeln!(user, "{}", json_line(t));
    }
    push_silent(&mut user, root.silent_pods.iter().map(PodId::as_str));
    let _ = writeln!(user, "{FINDINGS_HEADER}");
    for f in &root.findings {
        let _ = writeln!(user, "{}", finding_line(f));
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Asks whether a stored case explains the current incident.
pub fn kb_confirm(case: &CaseRecord, score: f64, tau: f64, explored: &[&ServiceEvidence]) -> Vec<ChatMessage> {
    let system = format!(
        "Compare a previously confirmed incident with the current one. Answer {MATCH} only if \
         the stored case fully accounts for what is observed now; otherwise answer {NO_MATCH}. \
         Put the answer between {MATCH_START} and {MATCH_END}."
    );
    let mut user = String::new();
    let _ = writeln!(user, "{CASE_HEADER}");
    let _ = writeln!(user, "case: {}", case.case_id);
    let _ = writeln!(user, "root cause: {}", case.root_cause_service);
    let _ = writeln!(user, "fault type: {}", case.fault_type);
    if !case.solution.is_empty() {
        let _ = writeln!(user, "resolution: {}", case.solution.replace('\n', " "));
    }
    for (svc, fp) in &case.per_service {
        let _ = writeln!(user, "fingerprint {svc}: {}", fp.tokens().collect::<Vec<_>>().join(" "));
    }
    let _ = writeln!(user, "{SIMILARITY_PREFIX} {score}");
    let _ = writeln!(user, "{THRESHOLD_PREFIX} {tau}");
    let _ = writeln!(user, "{CURRENT_HEADER}");
    for e in explored {
        push_evidence(&mut user, e);
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}

/// Condenses retained log templates for one service.
pub fn log_summary(service: &ServiceId, lines: &[String]) -> Vec<ChatMessage> {
    let system = format!(
        "Condense the abnormal log templates of one service into a short note for an on-call \
         engineer, keeping pod names and occurrence counts. Place the note between \
         {SUMMARY_START} and {SUMMARY_END}."
    );
    let mut user = String::new();
    let _ = writeln!(user, "Service: {service}");
    let _ = writeln!(user, "{TEMPLATES_HEADER}");
    for l in lines {
        let _ = writeln!(user, "- {l}");
    }
    vec![ChatMessage::system(system), ChatMessage::user(user)]
}
