//! Rule engine answering every prompt contract in `prompts` from the text of
//! the request alone.

use std::collections::{BTreeMap, BTreeSet};

use crate::detect::AnomalyFinding;
use crate::telemetry::{PodId, ServiceId};
use crate::verdict::{classify_fault_type, raw_score, simulation_s, ExpertRule, TaxonomyEntry};

use super::prompts::*;
use super::{render_marked, ChatMessage, OracleError, Role};

pub fn respond(messages: &[ChatMessage]) -> Result<String, OracleError> {
    let joined = |role: Role| {
        messages
            .iter()
            .filter(|m| m.role == role)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let system = joined(Role::System);
    let user = joined(Role::User);
    let doc = Document::parse(&user);
    if system.contains(MATCH_START) {
        Ok(confirm(&doc))
    } else if system.contains(SUMMARY_START) {
        Ok(summary(&doc))
    } else if system.contains(TYPE_START) {
        Ok(fault_types(&doc))
    } else if system.contains(CAUSE_START) {
        Ok(simulate(&doc))
    } else if system.contains(SERVICE_START) {
        Ok(verify(&doc))
    } else {
        let head: String = system.chars().take(60).collect();
        Err(OracleError::UnknownPrompt(head))
    }
}

/// `## ` sections, each holding loose lines and `### ` blocks.
struct Document<'a> {
    sections: Vec<Section<'a>>,
}

#[derive(Default)]
struct Section<'a> {
    header: &'a str,
    lines: Vec<&'a str>,
    blocks: Vec<(&'a str, Vec<&'a str>)>,
}

impl<'a> Document<'a> {
    fn parse(text: &'a str) -> Self {
        let mut sections = vec![Section::default()];
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("### ") {
                sections.last_mut().unwrap().blocks.push((h.trim(), Vec::new()));
            } else if line.starts_with("## ") {
                sections.push(Section {
                    header: line.trim(),
                    ..Section::default()
                });
            } else {
                let s = sections.last_mut().unwrap();
                match s.blocks.last_mut() {
                    Some((_, lines)) => lines.push(line),
                    None => s.lines.push(line),
                }
            }
        }
        Self { sections }
    }

    fn section(&self, header: &str) -> Option<&Section<'a>> {
        self.sections.iter().find(|s| s.header.starts_with(header))
    }

    fn all_lines(&self) -> impl Iterator<Item = &&'a str> {
        self.sections.iter().flat_map(|s| s.lines.iter())
    }

    fn value(&self, prefix: &str) -> Option<&'a str> {
        self.all_lines()
            .find_map(|l| l.trim().strip_prefix(prefix).map(str::trim))
    }
}

fn json_items<T: serde::de::DeserializeOwned>(section: Option<&Section<'_>>) -> Vec<T> {
    section
        .map(|s| {
            s.lines
                .iter()
                .filter_map(|l| l.trim().strip_prefix("- "))
                .filter_map(|j| serde_json::from_str(j).ok())
                .collect()
        })
        .unwrap_or_default()
}

fn findings(service: &ServiceId, lines: &[&str]) -> Vec<AnomalyFinding> {
    lines.iter().filter_map(|l| parse_finding_line(l, service)).collect()
}

fn blocks(section: Option<&Section<'_>>) -> Vec<(ServiceId, Vec<AnomalyFinding>)> {
    section
        .map(|s| {
            s.blocks
                .iter()
                .map(|(name, lines)| {
                    let svc = ServiceId::new(*name);
                    let f = findings(&svc, lines);
                    (svc, f)
                })
                .collect()
        })
        .unwrap_or_default()
}

fn verify(doc: &Document<'_>) -> String {
    let rules: Vec<ExpertRule> = json_items(doc.section(RULES_HEADER));
    let scored: BTreeMap<ServiceId, f64> = blocks(doc.section(CANDIDATES_HEADER))
        .into_iter()
        .map(|(s, f)| {
            let v = raw_score(&f, &rules);
            (s, v)
        })
        .collect();
    scored
        .iter()
        .map(|(s, v)| {
            format!(
                "{}\n{}",
                render_marked(SERVICE_START, s.as_str(), SERVICE_END),
                render_marked(SCORE_START, &v.to_string(), SCORE_END)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn simulate(doc: &Document<'_>) -> String {
    let own: usize = blocks(doc.section(NODE_HEADER)).first().map_or(0, |(_, f)| f.len());
    let callers: usize = doc
        .section(CALLERS_HEADER)
        .map(|s| {
            s.lines
                .iter()
                .filter_map(|l| parse_caller_line(l))
                .map(|(_, n)| n)
                .sum()
        })
        .unwrap_or(0);
    let s = simulation_s(own, callers);
    format!(
        "{}\n{}",
        render_marked(SCORE_START, &s.to_string(), SCORE_END),
        render_marked(CAUSE_START, if s >= 6 { "yes" } else { "no" }, CAUSE_END)
    )
}

fn fault_types(doc: &Document<'_>) -> String {
    let taxonomy: Vec<TaxonomyEntry> = json_items(doc.section(TAXONOMY_HEADER));
    let silent: BTreeSet<PodId> = doc
        .value(SILENT_PREFIX)
        .filter(|v| *v != "none")
        .map(|v| v.split(',').map(|p| PodId::from(p.trim())).collect())
        .unwrap_or_default();
    let service = ServiceId::new(doc.value("Service:").unwrap_or_default());
    let f = doc
        .section(FINDINGS_HEADER)
        .map(|s| findings(&service, &s.lines))
        .unwrap_or_default();
    classify_fault_type(&f, &silent, &taxonomy)
        .entries
        .iter()
        .map(|e| render_marked(TYPE_START, &format!("{} | {}", e.label, e.count), TYPE_END))
        .collect::<Vec<_>>()
        .join("\n")
}

fn confirm(doc: &Document<'_>) -> String {
    let num = |p: &str| doc.value(p).and_then(|v| v.parse::<f64>().ok());
    let verdict = match (num(SIMILARITY_PREFIX), num(THRESHOLD_PREFIX)) {
        (Some(s), Some(t)) if s >= t => MATCH,
        _ => NO_MATCH,
    };
    render_marked(MATCH_START, verdict, MATCH_END)
}

fn summary(doc: &Document<'_>) -> String {
    let lines: Vec<&str> = doc
        .section(TEMPLATES_HEADER)
        .map(|s| s.lines.iter().filter_map(|l| l.trim().strip_prefix("- ")).collect())
        .unwrap_or_default();
    let body = if lines.is_empty() {
        crate::logmine::NO_ABNORMAL_LOGS.to_string()
    } else {
        lines.join("\n")
    };
    render_marked(SUMMARY_START, &body, SUMMARY_END)
}
