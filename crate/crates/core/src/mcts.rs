//! Monte Carlo tree search over the fault mining tree.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evidence::{EvidenceSource, ServiceEvidence};
use crate::graph::{FaultMiningTree, VIRTUAL_ROOT};
use crate::kb::{confirm_match, Fingerprint, KnowledgeBase, MatchDecision};
use crate::oracle::{Exchange, Oracle};
use crate::telemetry::{PodId, ServiceId, TimeWindow};
use crate::verdict::{
    rank_fault_types, refine_granularity, simulate_with_oracle, verify_children, ChildScoreSet, ExpertRule,
    FaultTypeEntry, FaultTypeRanking, Granularity, SimulationScore, TaxonomyEntry,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum MctsError {
    #[error("nothing alarmed")]
    NothingAlarmed,
    #[error("invalid search configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MctsConfig {
    pub iterations: usize,
    pub exploration: f64,
    pub max_path_depth: usize,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            exploration: 1.414,
            max_path_depth: 32,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        if self.iterations == 0 {
            return Err(MctsError::Config("iterations must be at least 1".into()));
        }
        if !(self.exploration > 0.0 && self.exploration.is_finite()) {
            return Err(MctsError::Config("exploration constant must be positive".into()));
        }
        if self.max_path_depth == 0 {
            return Err(MctsError::Config("max_path_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// `Q/N + C·√(ln N_parent / N)`, infinite for unvisited nodes.
pub fn uct(q: f64, n: u32, parent_n: u32, c: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let n = f64::from(n);
    q / n + c * (f64::from(parent_n.max(1)).ln() / n).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub service: Option<ServiceId>,
    pub q: f64,
    pub n: u32,
    pub children: Vec<usize>,
    pub expanded: bool,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_hit: Option<String>,
}

/// Scoring roles and knowledge shared by every step of one search.
pub struct Agents<'a> {
    pub evidence: &'a mut dyn EvidenceSource,
    pub oracle: &'a mut Oracle,
    pub kb: &'a KnowledgeBase,
    pub rules: &'a [ExpertRule],
    pub taxonomy: &'a [TaxonomyEntry],
    pub tau: f64,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbCheck {
    pub candidates: Vec<String>,
    pub best_case: Option<String>,
    pub score: Option<f64>,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub selected_path: Vec<ServiceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ChildScoreSet>,
    pub simulated: ServiceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<KbCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationScore>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbCaseRef {
    pub case_id: String,
    pub root_cause_service: ServiceId,
    pub fault_type: String,
    pub solution: String,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportStats {
    pub oracle_calls: usize,
    /// Largest single oracle input, in characters.
    pub max_input_chars: usize,
    pub total_input_chars: usize,
    pub elapsed_ms: f64,
    pub iterations_used: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestionCounts {
    pub metric_series: usize,
    pub log_records: usize,
    pub spans: usize,
    pub dropped_metric_rows: usize,
    pub dropped_log_rows: usize,
    pub dropped_span_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub schema_version: u32,
    pub report_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<TimeWindow>,
    pub fault_path: Vec<ServiceId>,
    pub root_cause_service: Option<ServiceId>,
    pub granularity: Option<Granularity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_cause_pod: Option<PodId>,
    pub fault_types: FaultTypeRanking,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_case: Option<KbCaseRef>,
    pub alarmed: Vec<ServiceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<FaultMiningTree>,
    pub evidence: BTreeMap<ServiceId, ServiceEvidence>,
    pub trace: Vec<TraceStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<Exchange>,
    pub stats: ReportStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingestion: Option<IngestionCounts>,
}

impl DiagnosisReport {
    /// Deterministic id over the diagnosis outcome.
    pub fn compute_id(&self) -> String {
        let mut h = Sha256::new();
        if let Some(w) = &self.window {
            h.update(format!("{}:{}", w.start, w.end));
        }
        for s in self.alarmed.iter().chain(&self.fault_path) {
            h.update(s.as_str());
            h.update([0u8]);
        }
        h.update(self.fault_types.top());
        hex::encode(&h.finalize()[..6])
    }

    pub fn fault_type_labels(&self) -> Vec<&str> {
        self.fault_types.labels()
    }
}

struct Search<'t, 'a> {
    tree: &'t FaultMiningTree,
    cfg: &'t MctsConfig,
    agents: Agents<'a>,
    nodes: Vec<SearchNode>,
    evidence: BTreeMap<usize, ServiceEvidence>,
}

struct SimOutcome {
    reward: f64,
    kb: Option<KbCheck>,
    simulation: Option<SimulationScore>,
    hit: Option<KbCaseRef>,
}

impl<'t, 'a> Search<'t, 'a> {
    fn new(tree: &'t FaultMiningTree, cfg: &'t MctsConfig, agents: Agents<'a>) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| SearchNode {
                service: n.service.clone(),
                q: 0.0,
                n: 0,
                children: n.children.clone(),
                expanded: false,
                terminal: false,
                kb_hit: None,
            })
            .collect();
        Self {
            tree,
            cfg,
            agents,
            nodes,
            evidence: BTreeMap::new(),
        }
    }

    fn service(&self, i: usize) -> &ServiceId {
        self.tree.service(i).expect("virtual root has no service")
    }

    fn mine(&mut self, i: usize) {
        if !self.evidence.contains_key(&i) {
            let svc = self.service(i).clone();
            let e = self.agents.evidence.mine(&svc, self.agents.oracle);
            self.evidence.insert(i, e);
        }
    }

    fn select(&self) -> usize {
        let mut v = VIRTUAL_ROOT;
        let mut depth = 0;
        loop {
            let node = &self.nodes[v];
            if !node.expanded || node.children.is_empty() || depth >= self.cfg.max_path_depth {
                return v;
            }
            let mut best = node.children[0];
            let mut best_u = f64::NEG_INFINITY;
            for &c in &node.children {
                let u = uct(self.nodes[c].q, self.nodes[c].n, node.n, self.cfg.exploration);
                if u > best_u {
                    best_u = u;
                    best = c;
                }
            }
            v = best;
            depth += 1;
        }
    }

    fn expand(&mut self, v: usize) -> (Option<ChildScoreSet>, usize) {
        let kids = self.nodes[v].children.clone();
        if kids.is_empty() {
            self.nodes[v].terminal = true;
            self.nodes[v].expanded = true;
            return (None, v);
        }
        for &c in &kids {
            self.mine(c);
        }
        let parent = self.tree.service(v).cloned();
        let evs: Vec<&ServiceEvidence> = kids.iter().map(|c| &self.evidence[c]).collect();
        let set =
            verify_children(self.agents.oracle, parent.as_ref(), &evs, self.agents.rules).expect("children present");
        self.nodes[v].expanded = true;
        let best = kids
            .iter()
            .copied()
            .find(|&c| self.service(c) == &set.best)
            .unwrap_or(kids[0]);
        (Some(set), best)
    }

    fn kb_check(&mut self, v: usize) -> Option<(KbCheck, Option<KbCaseRef>)> {
        let kb = self.agents.kb;
        if !kb.has_cases() {
            return None;
        }
        let fp = Fingerprint::from_findings(&self.evidence[&v].findings);
        let top = kb.retrieve_topk(&fp, self.agents.top_k);
        let mut check = KbCheck {
            candidates: top.iter().map(|r| r.case_id.clone()).collect(),
            best_case: None,
            score: None,
            matched: false,
            flag: None,
        };
        if top.is_empty() {
            return Some((check, None));
        }
        let path = self.tree.path_to(v);
        for &p in &path {
            self.mine(p);
        }
        let explored: BTreeMap<ServiceId, Fingerprint> = path
            .iter()
            .map(|p| {
                (
                    self.service(*p).clone(),
                    Fingerprint::from_findings(&self.evidence[p].findings),
                )
            })
            .collect();
        let (case, score) = match kb.secondary_match(&explored, &top) {
            Ok(x) => x,
            Err(_) => return Some((check, None)),
        };
        check.best_case = Some(case.case_id.clone());
        check.score = Some(score);
        let evs: Vec<&ServiceEvidence> = path.iter().map(|p| &self.evidence[p]).collect();
        let conf = confirm_match(&case, score, &evs, self.agents.oracle, self.agents.tau);
        check.flag = conf.flag;
        if let MatchDecision::Match { .. } = conf.decision {
            check.matched = true;
            let hit = KbCaseRef {
                case_id: case.case_id.clone(),
                root_cause_service: case.root_cause_service.clone(),
                fault_type: case.fault_type.clone(),
                solution: case.solution.clone(),
                score,
            };
            return Some((check, Some(hit)));
        }
        Some((check, None))
    }

    fn simulate(&mut self, v: usize) -> SimOutcome {
        self.mine(v);
        let kb = self.kb_check(v);
        if let Some((check, Some(hit))) = kb {
            self.nodes[v].kb_hit = Some(hit.case_id.clone());
            return SimOutcome {
                reward: 1.0,
                kb: Some(check),
                simulation: None,
                hit: Some(hit),
            };
        }
        let callers = self.tree.callers_of(v);
        for &c in &callers {
            self.mine(c);
        }
        let evs: Vec<&ServiceEvidence> = callers.iter().map(|c| &self.evidence[c]).collect();
        let sim = simulate_with_oracle(self.agents.oracle, &self.evidence[&v], &evs);
        SimOutcome {
            reward: sim.r,
            kb: kb.map(|(c, _)| c),
            simulation: Some(sim),
            hit: None,
        }
    }

    fn backpropagate(&mut self, v: usize, reward: f64) {
        let mut cur = Some(v);
        while let Some(c) = cur {
            self.nodes[c].n += 1;
            self.nodes[c].q += reward;
            cur = self.tree.parent(c);
        }
    }

    /// Descends by visit count, then mean value, then child order.
    fn best_path(&self) -> Vec<usize> {
        let mut path = Vec::new();
        let mut v = VIRTUAL_ROOT;
        while path.len() < self.cfg.max_path_depth {
            let mut best: Option<usize> = None;
            for &c in &self.nodes[v].children {
                let n = &self.nodes[c];
                if n.n == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let m = &self.nodes[b];
                        n.n > m.n || (n.n == m.n && n.q / f64::from(n.n) > m.q / f64::from(m.n))
                    }
                };
                if better {
                    best = Some(c);
                }
            }
            match best {
                Some(c) => {
                    path.push(c);
                    v = c;
                }
                None => break,
            }
        }
        path
    }
}

/// Full search result before report assembly.
pub struct SearchOutcome {
    pub nodes: Vec<SearchNode>,
    pub path: Vec<usize>,
    pub trace: Vec<TraceStep>,
    pub kb_hit: Option<KbCaseRef>,
    pub evidence: BTreeMap<usize, ServiceEvidence>,
    pub iterations_used: usize,
}

fn search<'a>(
    tree: &FaultMiningTree,
    cfg: &MctsConfig,
    agents: Agents<'a>,
) -> Result<(SearchOutcome, Agents<'a>), MctsError> {
    cfg.validate()?;
    if tree.is_empty() {
        return Err(MctsError::NothingAlarmed);
    }
    let mut s = Search::new(tree, cfg, agents);
    let mut trace = Vec::new();
    let mut hit = None;
    let mut used = 0;
    for it in 1..=cfg.iterations {
        used = it;
        let vl = s.select();
        let (expansion, vh) = s.expand(vl);
        let out = s.simulate(vh);
        s.backpropagate(vh, out.reward);
        trace.push(TraceStep {
            iteration: it,
            selected_path: tree.path_to(vl).iter().map(|&i| s.service(i).clone()).collect(),
            expansion,
            simulated: s.service(vh).clone(),
            kb: out.kb,
            simulation: out.simulation,
            reward: out.reward,
        });
        if out.hit.is_some() {
            hit = out.hit.map(|h| (h, vh));
            break;
        }
    }
    let path = match &hit {
        Some((case, vh)) => match tree.index_of(&case.root_cause_service) {
            Some(i) => tree.path_to(i),
            None => tree.path_to(*vh),
        },
        None => s.best_path(),
    };
    let Search {
        nodes,
        evidence,
        agents,
        ..
    } = s;
    Ok((
        SearchOutcome {
            nodes,
            path,
            trace,
            kb_hit: hit.map(|(h, _)| h),
            evidence,
            iterations_used: used,
        },
        agents,
    ))
}

/// Runs the search and assembles a report: most visited path, root cause
/// at its end, fault types and granularity from the root cause's evidence.
pub fn run(tree: &FaultMiningTree, cfg: &MctsConfig, agents: Agents<'_>) -> Result<DiagnosisReport, MctsError> {
    let started = Instant::now();
    let (mut out, agents) = search(tree, cfg, agents)?;
    let mut flags = Vec::new();
    let mut fault_path: Vec<ServiceId> = out.path.iter().filter_map(|&i| tree.service(i).cloned()).collect();
    let root = match &out.kb_hit {
        Some(h) => {
            if fault_path.last() != Some(&h.root_cause_service) {
                fault_path.push(h.root_cause_service.clone());
                flags.push("stored root cause lies outside the explored path".into());
            }
            Some(h.root_cause_service.clone())
        }
        None => fault_path.last().cloned(),
    };
    let root_evidence = match (&root, out.path.last()) {
        (Some(r), _) => {
            let idx = tree.index_of(r);
            match idx {
                Some(i) => out
                    .evidence
                    .entry(i)
                    .or_insert_with(|| agents.evidence.mine(r, agents.oracle))
                    .clone(),
                None => agents.evidence.mine(r, agents.oracle),
            }
        }
        _ => ServiceEvidence::default(),
    };
    let (fault_types, granularity, pod) = match &out.kb_hit {
        Some(h) => {
            let case = agents.kb.case(&h.case_id);
            let (g, pod) = match case.and_then(|c| c.root_cause_pod.clone()) {
                Some(p) => (Granularity::Pod(PodId::new(p.clone())), Some(PodId::new(p))),
                None => (Granularity::Service, None),
            };
            let ft = FaultTypeRanking {
                entries: vec![FaultTypeEntry {
                    label: h.fault_type.clone(),
                    count: 0,
                    rationale: format!("stored case {}", h.case_id),
                }],
                flags: Vec::new(),
            };
            (ft, Some(g), pod)
        }
        None => {
            let ft = rank_fault_types(agents.oracle, &root_evidence, agents.taxonomy);
            let g = refine_granularity(&root_evidence.findings, &root_evidence.silent_pods);
            if let Some(f) = &g.flag {
                flags.push(f.clone());
            }
            let pod = match &g.granularity {
                Granularity::Pod(p) => Some(p.clone()),
                Granularity::Service => None,
            };
            (ft, Some(g.granularity), pod)
        }
    };
    let stats = agents.oracle.stats();
    let evidence: BTreeMap<ServiceId, ServiceEvidence> = out
        .evidence
        .iter()
        .filter_map(|(i, e)| tree.service(*i).map(|s| (s.clone(), e.clone())))
        .collect();
    let mut report = DiagnosisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        report_id: String::new(),
        window: None,
        fault_path,
        root_cause_service: root,
        granularity,
        root_cause_pod: pod,
        fault_types,
        kb_case: out.kb_hit.clone(),
        alarmed: tree.nodes.iter().filter_map(|n| n.service.clone()).collect(),
        tree: Some(tree.clone()),
        evidence,
        trace: out.trace,
        transcripts: agents.oracle.transcript().to_vec(),
        stats: ReportStats {
            oracle_calls: stats.calls,
            max_input_chars: stats.max_input_chars,
            total_input_chars: stats.total_input_chars,
            elapsed_ms: started.elapsed().as_secs_f64() * 1000.0,
            iterations_used: out.iterations_used,
        },
        flags,
        ingestion: None,
    };
    report.alarmed.sort();
    report.report_id = report.compute_id();
    Ok(report)
}

/// Visit statistics only, for analysis and tests.
pub fn run_search(tree: &FaultMiningTree, cfg: &MctsConfig, agents: Agents<'_>) -> Result<SearchOutcome, MctsError> {
    search(tree, cfg, agents).map(|(o, _)| o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{AnomalyFinding, FindingKind, FindingSource, Severity};
    use crate::graph::{build_fault_mining_tree, extract_alarm_topology};
    use crate::telemetry::DependencyGraph;
    use crate::verdict::default_taxonomy;
    use std::collections::BTreeSet;

    #[test]
    fn uct_examples() {
        assert_eq!(uct(0.0, 0, 5, 1.0), f64::INFINITY);
        assert_eq!(uct(0.0, 1, 1, 3.0), 0.0);
        let v = uct(3.0, 2, 8, 1.0);
        assert!((v - (1.5 + (8f64.ln() / 2.0).sqrt())).abs() < 1e-12);
        assert!((v - 2.5197).abs() < 1e-4);
        let a = uct(3.0, 2, 4, 1.0);
        let b = uct(1.0, 2, 4, 1.0);
        assert!((a - 2.3326).abs() < 1e-3 && (b - 1.3326).abs() < 1e-3);
    }

    fn findings(svc: &str, n: usize, src: FindingSource) -> Vec<AnomalyFinding> {
        (0..n)
            .map(|i| AnomalyFinding {
                timestamp: i as f64 * 60.0,
                service: svc.into(),
                pod: Some(format!("{svc}-0").into()),
                source: src,
                kind: if src == FindingSource::Metric {
                    FindingKind::Spike
                } else {
                    FindingKind::ErrorLog
                },
                subject: if src == FindingSource::Metric {
                    "cpu_usage".into()
                } else {
                    format!("t{i}")
                },
                severity: Severity::Severe,
                detail: String::new(),
                observation: None,
            })
            .collect()
    }

    fn chain_tree(edges: &[(&str, &str)], alarmed: &[&str]) -> FaultMiningTree {
        let dep = DependencyGraph::from_edges(edges.iter().copied());
        let set: BTreeSet<ServiceId> = alarmed.iter().map(|s| ServiceId::from(*s)).collect();
        build_fault_mining_tree(&extract_alarm_topology(&dep, &set).unwrap()).unwrap()
    }

    fn source(map: BTreeMap<&'static str, Vec<AnomalyFinding>>) -> impl FnMut(&ServiceId) -> ServiceEvidence {
        move |s: &ServiceId| ServiceEvidence {
            service: s.clone(),
            findings: map.get(s.as_str()).cloned().unwrap_or_default(),
            ..Default::default()
        }
    }

    fn agents<'a>(
        src: &'a mut dyn EvidenceSource,
        oracle: &'a mut Oracle,
        kb: &'a KnowledgeBase,
        tax: &'a [TaxonomyEntry],
    ) -> Agents<'a> {
        Agents {
            evidence: src,
            oracle,
            kb,
            rules: &[],
            taxonomy: tax,
            tau: 0.8,
            top_k: 5,
        }
    }

    #[test]
    fn single_service() {
        let tree = chain_tree(&[("A", "B")], &["A"]);
        let mut src = source(BTreeMap::new());
        let mut o = Oracle::deterministic();
        let kb = KnowledgeBase::default();
        let tax = default_taxonomy();
        let cfg = MctsConfig {
            iterations: 1,
            ..Default::default()
        };
        let r = run(&tree, &cfg, agents(&mut src, &mut o, &kb, &tax)).unwrap();
        assert_eq!(r.root_cause_service, Some("A".into()));
        assert_eq!(r.fault_path, vec![ServiceId::from("A")]);
    }

    #[test]
    fn chain_descends_to_evidence() {
        let tree = chain_tree(&[("A", "B"), ("B", "C")], &["A", "B", "C"]);
        let mut m = BTreeMap::new();
        let mut c = findings("C", 6, FindingSource::Metric);
        c.extend(findings("C", 2, FindingSource::Log));
        m.insert("C", c);
        m.insert("B", findings("B", 3, FindingSource::Log));
        m.insert("A", findings("A", 2, FindingSource::Log));
        let mut src = source(m);
        let mut o = Oracle::deterministic();
        let kb = KnowledgeBase::default();
        let tax = default_taxonomy();
        let r = run(&tree, &MctsConfig::default(), agents(&mut src, &mut o, &kb, &tax)).unwrap();
        assert_eq!(r.fault_path, vec![ServiceId::from("A"), "B".into(), "C".into()]);
        assert_eq!(r.root_cause_service, Some("C".into()));
        assert_eq!(r.fault_types.top(), crate::verdict::CPU_LABEL);
        assert_eq!(r.granularity, Some(Granularity::Pod("C-0".into())));
    }

    #[test]
    fn root_visits_equal_iterations() {
        let tree = chain_tree(&[("A", "B"), ("A", "C")], &["A", "B", "C"]);
        let mut src = source(BTreeMap::new());
        let mut o = Oracle::deterministic();
        let kb = KnowledgeBase::default();
        let tax = default_taxonomy();
        let cfg = MctsConfig {
            iterations: 7,
            ..Default::default()
        };
        let out = run_search(&tree, &cfg, agents(&mut src, &mut o, &kb, &tax)).unwrap();
        assert_eq!(out.nodes[VIRTUAL_ROOT].n, 7);
        let leaf_sum: f64 = out.trace.iter().map(|t| t.reward).sum();
        assert!((out.nodes[VIRTUAL_ROOT].q - leaf_sum).abs() < 1e-12);
        for n in &out.nodes {
            assert!(n.q <= f64::from(n.n) + 1e-12);
        }
    }

    #[test]
    fn empty_tree_errors() {
        let tree = FaultMiningTree {
            nodes: vec![crate::graph::TreeNode {
                id: 0,
                service: None,
                parent: None,
                children: vec![],
            }],
            cross_links: vec![],
            removed_edges: vec![],
        };
        let mut src = source(BTreeMap::new());
        let mut o = Oracle::deterministic();
        let kb = KnowledgeBase::default();
        let tax = default_taxonomy();
        let err = run(&tree, &MctsConfig::default(), agents(&mut src, &mut o, &kb, &tax)).unwrap_err();
        assert_eq!(err, MctsError::NothingAlarmed);
    }

    #[test]
    fn kb_hit_stops_after_first_iteration() {
        let tree = chain_tree(&[("A", "B")], &["A", "B"]);
        let mut m = BTreeMap::new();
        m.insert("A", findings("A", 3, FindingSource::Log));
        m.insert("B", findings("B", 5, FindingSource::Metric));
        let mut src = source(m.clone());
        let mut o = Oracle::deterministic();
        let empty = KnowledgeBase::default();
        let tax = default_taxonomy();
        let first = run(&tree, &MctsConfig::default(), agents(&mut src, &mut o, &empty, &tax)).unwrap();
        let mut kb = KnowledgeBase::default();
        kb.add_case(&first, true, "restart").unwrap();
        let mut src = source(m);
        let mut o = Oracle::deterministic();
        let again = run(&tree, &MctsConfig::default(), agents(&mut src, &mut o, &kb, &tax)).unwrap();
        assert_eq!(again.stats.iterations_used, 1);
        assert_eq!(again.root_cause_service, first.root_cause_service);
        assert_eq!(again.fault_types.top(), first.fault_types.top());
        assert!(again.kb_case.is_some());
    }

    #[test]
    fn reproducible() {
        let tree = chain_tree(&[("A", "B"), ("A", "C"), ("C", "D")], &["A", "B", "C", "D"]);
        let mut m = BTreeMap::new();
        m.insert("D", findings("D", 4, FindingSource::Metric));
        m.insert("B", findings("B", 1, FindingSource::Log));
        let go = || {
            let mut src = source(m.clone());
            let mut o = Oracle::deterministic();
            let kb = KnowledgeBase::default();
            let tax = default_taxonomy();
            let mut r = run(&tree, &MctsConfig::default(), agents(&mut src, &mut o, &kb, &tax)).unwrap();
            r.stats.elapsed_ms = 0.0;
            serde_json::to_string(&r).unwrap()
        };
        assert_eq!(go(), go());
    }
}
