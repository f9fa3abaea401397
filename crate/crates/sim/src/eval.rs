//! FL@1, FT@k, ATC and MTC over paired reports and manifests.

use std::fmt;

use serde::{Deserialize, Serialize};

use rootscope_core::mcts::DiagnosisReport;
use rootscope_core::pipeline::Diagnosis;
use rootscope_core::telemetry::ServiceId;

use crate::scenario::Manifest;
use crate::SimError;

/// The parts of a diagnosis the metrics look at.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub root_cause: Option<ServiceId>,
    pub fault_types: Vec<String>,
    pub elapsed_ms: f64,
    pub max_input_chars: usize,
    #[serde(default)]
    pub iterations_used: usize,
}

impl From<&DiagnosisReport> for Outcome {
    fn from(r: &DiagnosisReport) -> Self {
        Self {
            root_cause: r.root_cause_service.clone(),
            fault_types: r.fault_type_labels().into_iter().map(str::to_string).collect(),
            elapsed_ms: r.stats.elapsed_ms,
            max_input_chars: r.stats.max_input_chars,
            iterations_used: r.stats.iterations_used,
        }
    }
}

impl From<&Diagnosis> for Outcome {
    /// A run that raised no alarm localizes nothing.
    fn from(d: &Diagnosis) -> Self {
        d.report().map(Outcome::from).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub cases: usize,
    pub fl1: f64,
    /// FT@1, FT@2, FT@3 over all cases.
    pub ft: [f64; 3],
    /// Mean seconds per diagnosis.
    pub atc_secs: f64,
    /// Largest oracle input in characters.
    pub mtc_chars: usize,
}

/// Scores `outcomes[i]` against `manifests[i]`. Fault types only count when
/// the service is right.
pub fn evaluate(outcomes: &[Outcome], manifests: &[Manifest]) -> Result<EvalResult, SimError> {
    if outcomes.len() != manifests.len() {
        return Err(SimError::Eval(format!(
            "{} reports but {} manifests",
            outcomes.len(),
            manifests.len()
        )));
    }
    if outcomes.is_empty() {
        return Err(SimError::Eval("nothing to evaluate".into()));
    }
    let n = outcomes.len() as f64;
    let mut located = 0usize;
    let mut typed = [0usize; 3];
    for (o, m) in outcomes.iter().zip(manifests) {
        if o.root_cause.as_ref() != Some(&m.target) {
            continue;
        }
        located += 1;
        if let Some(rank) = o.fault_types.iter().take(3).position(|t| *t == m.fault_type) {
            for hit in &mut typed[rank..] {
                *hit += 1;
            }
        }
    }
    Ok(EvalResult {
        cases: outcomes.len(),
        fl1: located as f64 / n,
        ft: typed.map(|t| t as f64 / n),
        atc_secs: outcomes.iter().map(|o| o.elapsed_ms).sum::<f64>() / n / 1000.0,
        mtc_chars: outcomes.iter().map(|o| o.max_input_chars).max().unwrap_or(0),
    })
}

impl fmt::Display for EvalResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>10}", "metric", "value")?;
        writeln!(f, "{:<8} {:>10}", "cases", self.cases)?;
        writeln!(f, "{:<8} {:>10.3}", "FL@1", self.fl1)?;
        for (k, v) in self.ft.iter().enumerate() {
            writeln!(f, "{:<8} {:>10.3}", format!("FT@{}", k + 1), v)?;
        }
        writeln!(f, "{:<8} {:>10.3}", "ATC(s)", self.atc_secs)?;
        write!(f, "{:<8} {:>10}", "MTC", self.mtc_chars)
    }
}
