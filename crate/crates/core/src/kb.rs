//! Expert rules, known log-template patterns and the confirmed case library.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::AnomalyFinding;
use crate::evidence::ServiceEvidence;
use crate::mcts::DiagnosisReport;
use crate::oracle::{parse_marked, prompts, Oracle};
use crate::telemetry::ServiceId;
use crate::verdict::{validate_rules, ExpertRule, TaxonomyEntry, VerdictError};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base io: {0}")]
    Io(#[from] std::io::Error),
    #[error("knowledge base format: {0}")]
    Format(#[from] serde_json::Error),
    #[error("no candidate cases")]
    NoCandidates,
    #[error("case `{0}` already exists")]
    DuplicateCase(String),
    #[error("refusing to store an unconfirmed case")]
    Unconfirmed,
    #[error("invalid case: {0}")]
    InvalidCase(String),
    #[error(transparent)]
    Rule(#[from] VerdictError),
}

/// Service-level anomaly signature: `source:kind:subject` tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(BTreeSet<String>);

impl Fingerprint {
    pub fn from_findings(findings: &[AnomalyFinding]) -> Self {
        Self(
            findings
                .iter()
                .map(|f| format!("{}:{}:{}", f.source, f.kind, f.subject).to_lowercase())
                .collect(),
        )
    }

    pub fn from_tokens<I: IntoIterator<Item = S>, S: Into<String>>(tokens: I) -> Self {
        Self(tokens.into_iter().map(Into::into).collect())
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `|a ∩ b| / |a ∪ b|`, 1 when both are empty.
pub fn jaccard(a: &Fingerprint, b: &Fingerprint) -> f64 {
    if a.0.is_empty() && b.0.is_empty() {
        return 1.0;
    }
    let inter = a.0.intersection(&b.0).count();
    let union = a.0.len() + b.0.len() - inter;
    inter as f64 / union as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GranularityLevel {
    Pod,
    Service,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub per_service: BTreeMap<ServiceId, Fingerprint>,
    pub root_cause_service: ServiceId,
    pub granularity: GranularityLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_cause_pod: Option<String>,
    pub fault_type: String,
    #[serde(default)]
    pub solution: String,
    pub confirmed: bool,
}

impl CaseRecord {
    fn validate(&self) -> Result<(), KbError> {
        if !self.per_service.contains_key(&self.root_cause_service) {
            return Err(KbError::InvalidCase(format!(
                "{}: root cause {} has no fingerprint",
                self.case_id, self.root_cause_service
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBase {
    #[serde(default)]
    pub rules: Vec<ExpertRule>,
    #[serde(default)]
    pub normal_templates: Vec<String>,
    #[serde(default)]
    pub anomalous_templates: Vec<String>,
    #[serde(default)]
    pub cases: Vec<CaseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<Vec<TaxonomyEntry>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub case_id: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchDecision {
    Match { case_id: String },
    NoMatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confirmation {
    pub decision: MatchDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl KnowledgeBase {
    pub fn load(path: &Path) -> Result<Self, KbError> {
        let kb: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn load_or_default(path: &Path) -> Result<Self, KbError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), KbError> {
        validate_rules(&self.rules)?;
        let mut ids = BTreeSet::new();
        for c in &self.cases {
            c.validate()?;
            if !ids.insert(&c.case_id) {
                return Err(KbError::DuplicateCase(c.case_id.clone()));
            }
        }
        Ok(())
    }

    pub fn case(&self, id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == id)
    }

    pub fn has_cases(&self) -> bool {
        self.cases.iter().any(|c| c.confirmed)
    }

    /// Confirmed cases ranked by their best per-service similarity to
    /// `current`, ties by case id.
    pub fn retrieve_topk(&self, current: &Fingerprint, k: usize) -> Vec<RankedCase> {
        let mut ranked: Vec<RankedCase> = self
            .cases
            .iter()
            .filter(|c| c.confirmed)
            .map(|c| RankedCase {
                case_id: c.case_id.clone(),
                score: c
                    .per_service
                    .values()
                    .map(|fp| jaccard(current, fp))
                    .fold(0.0, f64::max),
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.case_id.cmp(&b.case_id)));
        ranked.truncate(k);
        ranked
    }

    /// Aligns explored services to each candidate's services greedily by
    /// similarity (each case service used once) and scores the mean over
    /// explored services; returns the best candidate.
    pub fn secondary_match(
        &self,
        explored: &BTreeMap<ServiceId, Fingerprint>,
        topk: &[RankedCase],
    ) -> Result<(CaseRecord, f64), KbError> {
        let mut best: Option<(&CaseRecord, f64)> = None;
        for r in topk {
            let Some(case) = self.case(&r.case_id) else { continue };
            let s = aligned_score(explored, case);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((case, s));
            }
        }
        best.map(|(c, s)| (c.clone(), s)).ok_or(KbError::NoCandidates)
    }

    /// Stores a confirmed diagnosis as a case built from its evidence.
    pub fn add_case(&mut self, report: &DiagnosisReport, confirmed: bool, solution: &str) -> Result<String, KbError> {
        if !confirmed {
            return Err(KbError::Unconfirmed);
        }
        let root = report
            .root_cause_service
            .clone()
            .ok_or_else(|| KbError::InvalidCase("report has no root cause".into()))?;
        let case_id = format!("case-{}", report.report_id);
        if self.case(&case_id).is_some() {
            return Err(KbError::DuplicateCase(case_id));
        }
        let mut per_service: BTreeMap<ServiceId, Fingerprint> = report
            .evidence
            .iter()
            .map(|(s, e)| (s.clone(), Fingerprint::from_findings(&e.findings)))
            .collect();
        per_service.entry(root.clone()).or_default();
        let (granularity, pod) = match &report.granularity {
            Some(crate::verdict::Granularity::Pod(p)) => (GranularityLevel::Pod, Some(p.to_string())),
            _ => (GranularityLevel::Service, None),
        };
        let case = CaseRecord {
            case_id: case_id.clone(),
            per_service,
            root_cause_service: root,
            granularity,
            root_cause_pod: pod,
            fault_type: report.fault_types.top().to_string(),
            solution: solution.to_string(),
            confirmed: true,
        };
        case.validate()?;
        self.cases.push(case);
        Ok(case_id)
    }
}

fn aligned_score(explored: &BTreeMap<ServiceId, Fingerprint>, case: &CaseRecord) -> f64 {
    if explored.is_empty() {
        return 0.0;
    }
    let mut pairs: Vec<(f64, &ServiceId, &ServiceId)> = explored
        .iter()
        .flat_map(|(e, efp)| case.per_service.iter().map(move |(c, cfp)| (jaccard(efp, cfp), e, c)))
        .collect();
    pairs.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(b.2))
    });
    let mut used_e = BTreeSet::new();
    let mut used_c = BTreeSet::new();
    let mut total = 0.0;
    for (s, e, c) in pairs {
        if used_e.contains(e) || used_c.contains(c) {
            continue;
        }
        used_e.insert(e);
        used_c.insert(c);
        total += s;
    }
    total / explored.len() as f64
}

/// Asks the oracle whether `case` explains the current evidence.
pub fn confirm_match(
    case: &CaseRecord,
    score: f64,
    explored: &[&ServiceEvidence],
    oracle: &mut Oracle,
    tau: f64,
) -> Confirmation {
    let msgs = prompts::kb_confirm(case, score, tau, explored);
    let reply = match oracle.complete("kb-confirm", &msgs) {
        Ok(r) => r,
        Err(e) => {
            return Confirmation {
                decision: MatchDecision::NoMatch,
                flag: Some(format!("confirmation call failed ({e})")),
            }
        }
    };
    match parse_marked(&reply, prompts::MATCH_START, prompts::MATCH_END)
        .first()
        .map(|s| s.to_ascii_uppercase())
        .as_deref()
    {
        Some(prompts::MATCH) => Confirmation {
            decision: MatchDecision::Match {
                case_id: case.case_id.clone(),
            },
            flag: None,
        },
        Some(prompts::NO_MATCH) => Confirmation {
            decision: MatchDecision::NoMatch,
            flag: None,
        },
        _ => Confirmation {
            decision: MatchDecision::NoMatch,
            flag: Some("confirmation reply unparseable".into()),
        },
    }
}
