//! Log template mining and log evidence.

pub mod cluster;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{format_timestamp, AnomalyFinding, FindingKind, FindingSource, Severity};
use crate::oracle::{parse_marked, prompts, Oracle};
use crate::telemetry::{LogRecord, PodId, ServiceId};
use cluster::{tfidf, Gmm, GmmConfig};

pub const WILDCARD: &str = "<*>";
pub const NO_ABNORMAL_LOGS: &str = "no abnormal logs";

pub const DEFAULT_KEYWORDS: [&str; 6] = ["error", "exception", "fatal", "fail", "timeout", "warn"];
pub const SEVERE_KEYWORDS: [&str; 3] = ["error", "exception", "fatal"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Token {
    Literal(String),
    Wildcard,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Literal(s) => f.write_str(s),
            Token::Wildcard => f.write_str(WILDCARD),
        }
    }
}

/// Numbers, IP addresses, hex strings and similar variable fields become
/// wildcards.
pub fn mask_token(tok: &str) -> Token {
    if tok == WILDCARD {
        return Token::Wildcard;
    }
    let core = tok.trim_matches(|c: char| matches!(c, ',' | ';' | '(' | ')' | '[' | ']' | '"' | '\''));
    let has_digit = core.chars().any(|c| c.is_ascii_digit());
    let variable = has_digit
        && core
            .chars()
            .all(|c| c.is_ascii_hexdigit() || matches!(c, '.' | ':' | '-' | '/' | '_' | 'x' | 'X' | '%'));
    if variable {
        Token::Wildcard
    } else {
        Token::Literal(tok.to_string())
    }
}

pub fn render_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

pub fn template_id_of(tokens: &[Token]) -> String {
    let digest = Sha256::digest(render_tokens(tokens).as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogTemplate {
    pub template_id: String,
    pub tokens: Vec<Token>,
    pub count: usize,
    pub samples: Vec<String>,
}

impl LogTemplate {
    pub fn pattern(&self) -> String {
        render_tokens(&self.tokens)
    }

    pub fn literals(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().filter_map(|t| match t {
            Token::Literal(s) => Some(s.as_str()),
            Token::Wildcard => None,
        })
    }

    /// Case-insensitive substring match against literal tokens and samples.
    pub fn mentions(&self, keyword: &str) -> bool {
        let k = keyword.to_lowercase();
        self.literals().any(|l| l.to_lowercase().contains(&k))
            || self.samples.iter().any(|s| s.to_lowercase().contains(&k))
    }

    pub fn mentions_any<S: AsRef<str>>(&self, keywords: &[S]) -> bool {
        keywords.iter().any(|k| self.mentions(k.as_ref()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrainConfig {
    pub depth: usize,
    pub similarity: f64,
    pub max_samples: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            similarity: 0.4,
            max_samples: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DrainResult {
    /// Sorted by template id.
    pub templates: Vec<LogTemplate>,
    /// Template id of each input message, in input order.
    pub assignment: Vec<String>,
}

impl DrainResult {
    pub fn get(&self, template_id: &str) -> Option<&LogTemplate> {
        self.templates
            .binary_search_by(|t| t.template_id.as_str().cmp(template_id))
            .ok()
            .map(|i| &self.templates[i])
    }
}

fn similarity(template: &[Token], msg: &[Token]) -> f64 {
    let same = template.iter().zip(msg).filter(|(a, b)| a == b).count();
    same as f64 / msg.len().max(1) as f64
}

/// Fixed-depth template-tree grouping. Messages are visited in order of
/// their masked token sequence so the resulting pattern set does not depend
/// on input order; groups that end with the same pattern are merged.
pub fn drain_parse<S: AsRef<str>>(messages: &[S], cfg: &DrainConfig) -> DrainResult {
    let masked: Vec<Vec<Token>> = messages
        .iter()
        .map(|m| m.as_ref().split_whitespace().map(mask_token).collect())
        .collect();
    let mut order: Vec<usize> = (0..masked.len()).collect();
    order.sort_by(|&a, &b| masked[a].cmp(&masked[b]).then(a.cmp(&b)));

    let prefix_len = cfg.depth.saturating_sub(2).max(1);
    let mut leaves: BTreeMap<(usize, Vec<Token>), Vec<usize>> = BTreeMap::new();
    let mut groups: Vec<(Vec<Token>, Vec<usize>)> = Vec::new();
    for &i in &order {
        let msg = &masked[i];
        let key = (msg.len(), msg.iter().take(prefix_len).cloned().collect::<Vec<_>>());
        let leaf = leaves.entry(key).or_default();
        let mut best: Option<(usize, f64)> = None;
        for &g in leaf.iter() {
            let s = similarity(&groups[g].0, msg);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((g, s));
            }
        }
        match best {
            Some((g, s)) if s >= cfg.similarity => {
                let tpl = &mut groups[g].0;
                for (t, m) in tpl.iter_mut().zip(msg) {
                    if t != m {
                        *t = Token::Wildcard;
                    }
                }
                groups[g].1.push(i);
            }
            _ => {
                leaf.push(groups.len());
                groups.push((msg.clone(), vec![i]));
            }
        }
    }

    let mut merged: BTreeMap<String, (Vec<Token>, Vec<usize>)> = BTreeMap::new();
    for (tokens, members) in groups {
        let id = template_id_of(&tokens);
        let e = merged.entry(id).or_insert_with(|| (tokens, Vec::new()));
        e.1.extend(members);
    }
    let mut assignment = vec![String::new(); messages.len()];
    let templates = merged
        .into_iter()
        .map(|(id, (tokens, mut members))| {
            members.sort_unstable();
            for &m in &members {
                assignment[m] = id.clone();
            }
            LogTemplate {
                template_id: id,
                tokens,
                count: members.len(),
                samples: members
                    .iter()
                    .take(cfg.max_samples)
                    .map(|&m| messages[m].as_ref().to_string())
                    .collect(),
            }
        })
        .collect();
    DrainResult { templates, assignment }
}

/// Splits templates into those mentioning a keyword and the rest.
pub fn keyword_filter<S: AsRef<str>>(
    templates: &[LogTemplate],
    keywords: &[S],
) -> (Vec<LogTemplate>, Vec<LogTemplate>) {
    templates.iter().cloned().partition(|t| t.mentions_any(keywords))
}

/// Second-stage selection when keyword matches exceed the budget.
#[derive(Clone, Debug)]
pub enum SecondStage<'a> {
    Cluster {
        gmm: GmmConfig,
        /// A cluster is kept when one of its templates mentions one of these.
        anchors: &'a [String],
    },
    KbMatch {
        anomalous: &'a [String],
        normal: &'a [String],
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOutcome {
    pub retained: Vec<LogTemplate>,
    /// Set when clustering was bypassed for lack of templates.
    pub degraded: bool,
}

/// A KB pattern matches a template of the same length when every
/// non-wildcard pattern token equals the template's literal there.
pub fn pattern_matches(pattern: &str, template: &LogTemplate) -> bool {
    let p: Vec<&str> = pattern.split_whitespace().collect();
    p.len() == template.tokens.len()
        && p.iter()
            .zip(&template.tokens)
            .all(|(pt, tt)| *pt == WILDCARD || matches!(tt, Token::Literal(l) if l.eq_ignore_ascii_case(pt)))
}

fn by_count(a: &LogTemplate, b: &LogTemplate) -> std::cmp::Ordering {
    b.count.cmp(&a.count).then_with(|| a.template_id.cmp(&b.template_id))
}

pub fn second_stage_filter(priority: &[LogTemplate], stage: &SecondStage<'_>, budget: usize) -> StageOutcome {
    match stage {
        SecondStage::KbMatch { anomalous, normal } => {
            let mut keep: Vec<(bool, &LogTemplate)> = priority
                .iter()
                .filter_map(|t| {
                    let bad = anomalous.iter().any(|p| pattern_matches(p, t));
                    let ok = normal.iter().any(|p| pattern_matches(p, t));
                    (bad || !ok).then_some((bad, t))
                })
                .collect();
            keep.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| by_count(a.1, b.1)));
            StageOutcome {
                retained: keep.into_iter().take(budget).map(|(_, t)| t.clone()).collect(),
                degraded: false,
            }
        }
        SecondStage::Cluster { gmm, anchors } => {
            let mut retained: Vec<LogTemplate> = if priority.len() < gmm.k.max(1) {
                priority.to_vec()
            } else {
                let (_, vectors) = tfidf(priority);
                let data: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.weights).collect();
                let model = Gmm::fit(&data, gmm);
                let labels: Vec<usize> = data.iter().map(|x| model.predict(x)).collect();
                let flagged: BTreeSet<usize> = labels
                    .iter()
                    .zip(priority)
                    .filter(|(_, t)| t.mentions_any(anchors))
                    .map(|(l, _)| *l)
                    .collect();
                priority
                    .iter()
                    .zip(&labels)
                    .filter(|(_, l)| flagged.contains(l))
                    .map(|(t, _)| t.clone())
                    .collect()
            };
            retained.sort_by(by_count);
            retained.truncate(budget);
            StageOutcome {
                retained,
                degraded: priority.len() < gmm.k.max(1),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogMinerConfig {
    pub drain: DrainConfig,
    pub keywords: Vec<String>,
    pub severe_keywords: Vec<String>,
    pub budget: usize,
    pub max_findings: usize,
    pub bin_secs: f64,
    pub gmm: GmmConfig,
}

impl Default for LogMinerConfig {
    fn default() -> Self {
        Self {
            drain: DrainConfig::default(),
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            severe_keywords: SEVERE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            budget: 20,
            max_findings: 30,
            bin_secs: 60.0,
            gmm: GmmConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageMode {
    None,
    Cluster,
    KbMatch,
}

/// Template patterns known to the knowledge base.
#[derive(Clone, Copy, Debug, Default)]
pub struct KbPatterns<'a> {
    pub anomalous: &'a [String],
    pub normal: &'a [String],
}

impl KbPatterns<'_> {
    pub fn is_empty(&self) -> bool {
        self.anomalous.is_empty() && self.normal.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub retained: Vec<LogTemplate>,
    pub mode: StageMode,
    pub degraded: bool,
}

/// Keyword prioritization, followed by the second stage when more templates
/// qualify than the budget allows. KB matching is used once the knowledge
/// base holds any template pattern; clustering otherwise.
pub fn select_templates(templates: &[LogTemplate], cfg: &LogMinerConfig, kb: KbPatterns<'_>) -> Selection {
    let (mut priority, _) = keyword_filter(templates, &cfg.keywords);
    if priority.len() <= cfg.budget {
        priority.sort_by(by_count);
        return Selection {
            retained: priority,
            mode: StageMode::None,
            degraded: false,
        };
    }
    let (stage, mode) = if kb.is_empty() {
        (
            SecondStage::Cluster {
                gmm: cfg.gmm.clone(),
                anchors: &cfg.severe_keywords,
            },
            StageMode::Cluster,
        )
    } else {
        (
            SecondStage::KbMatch {
                anomalous: kb.anomalous,
                normal: kb.normal,
            },
            StageMode::KbMatch,
        )
    };
    let out = second_stage_filter(&priority, &stage, cfg.budget);
    Selection {
        retained: out.retained,
        mode,
        degraded: out.degraded,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvidence {
    pub service: ServiceId,
    pub pod: Option<PodId>,
    pub findings: Vec<AnomalyFinding>,
    pub summary: String,
    pub retained_templates: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// `pod <p>: <n> occurrences of template <tokens>`, one line per pod and
/// template.
pub fn summary_lines(records: &[&LogRecord], assignment: &[&str], retained: &[LogTemplate]) -> Vec<String> {
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (r, id) in records.iter().zip(assignment) {
        if retained.iter().any(|t| t.template_id == *id) {
            *counts.entry((r.pod.as_str(), id)).or_default() += 1;
        }
    }
    let pattern: BTreeMap<&str, String> = retained.iter().map(|t| (t.template_id.as_str(), t.pattern())).collect();
    counts
        .into_iter()
        .map(|((pod, id), n)| format!("pod {pod}: {n} occurrences of template {}", pattern[id]))
        .collect()
}

/// One finding per retained template, pod and time bin; ERROR_LOG (SEVERE)
/// when the template carries a severe keyword, WARN_LOG otherwise. At most
/// `cfg.max_findings` findings, earliest first.
pub fn summarize_log_evidence(
    service: &ServiceId,
    pod: Option<&PodId>,
    records: &[&LogRecord],
    assignment: &[&str],
    retained: &[LogTemplate],
    cfg: &LogMinerConfig,
    oracle: &mut Oracle,
) -> LogEvidence {
    let mut evidence = LogEvidence {
        service: service.clone(),
        pod: pod.cloned(),
        findings: Vec::new(),
        summary: NO_ABNORMAL_LOGS.to_string(),
        retained_templates: retained.iter().map(|t| t.template_id.clone()).collect(),
        flags: Vec::new(),
    };
    let by_id: BTreeMap<&str, &LogTemplate> = retained.iter().map(|t| (t.template_id.as_str(), t)).collect();
    let mut bins: BTreeMap<(i64, &str, &str), (f64, usize)> = BTreeMap::new();
    for (r, id) in records.iter().zip(assignment) {
        if pod.is_some_and(|p| *p != r.pod) || !by_id.contains_key(id) {
            continue;
        }
        let bin = (r.timestamp / cfg.bin_secs).floor() as i64;
        let e = bins.entry((bin, id, r.pod.as_str())).or_insert((r.timestamp, 0));
        e.0 = e.0.min(r.timestamp);
        e.1 += 1;
    }
    for ((_, id, p), (ts, n)) in bins {
        let t = by_id[id];
        let severe = t.mentions_any(&cfg.severe_keywords);
        evidence.findings.push(AnomalyFinding {
            timestamp: ts,
            service: service.clone(),
            pod: Some(PodId::from(p)),
            source: FindingSource::Log,
            kind: if severe {
                FindingKind::ErrorLog
            } else {
                FindingKind::WarnLog
            },
            subject: id.to_string(),
            severity: if severe { Severity::Severe } else { Severity::Warning },
            detail: format!("{}: {n} lines of `{}`", format_timestamp(ts), t.pattern()),
            observation: None,
        });
    }
    crate::detect::sort_findings(&mut evidence.findings);
    evidence.findings.truncate(cfg.max_findings);

    let scoped: Vec<(&LogRecord, &str)> = records
        .iter()
        .zip(assignment)
        .filter(|(r, _)| pod.is_none_or(|p| *p == r.pod))
        .map(|(r, a)| (*r, *a))
        .collect();
    let (rs, ids): (Vec<&LogRecord>, Vec<&str>) = scoped.into_iter().unzip();
    let lines = summary_lines(&rs, &ids, retained);
    if lines.is_empty() {
        return evidence;
    }
    let rendered = lines.join("\n");
    match oracle.complete("log-summary", &prompts::log_summary(service, &lines)) {
        Ok(reply) => match parse_marked(&reply, prompts::SUMMARY_START, prompts::SUMMARY_END).first() {
            Some(s) if !s.is_empty() => evidence.summary = s.clone(),
            _ => {
                evidence.summary = rendered;
                evidence
                    .flags
                    .push("log summary reply unusable; rendered locally".into());
            }
        },
        Err(e) => {
            evidence.summary = rendered;
            evidence
                .flags
                .push(format!("log summary call failed ({e}); rendered locally"));
        }
    }
    evidence
}
