use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detect::AnomalyFinding;
use crate::oracle::Oracle;
use crate::telemetry::{PodId, ServiceId};

/// Everything gathered about one service during a diagnosis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceEvidence {
    pub service: ServiceId,
    pub findings: Vec<AnomalyFinding>,
    pub log_summary: String,
    /// Pods seen before the alarm window that emit nothing inside it.
    pub silent_pods: BTreeSet<PodId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl ServiceEvidence {
    pub fn empty(service: ServiceId) -> Self {
        Self {
            service,
            ..Self::default()
        }
    }

    pub fn count(&self) -> usize {
        self.findings.len()
    }
}

/// Supplies evidence for a service on demand. The oracle is available for
/// steps that summarize evidence.
pub trait EvidenceSource {
    fn mine(&mut self, service: &ServiceId, oracle: &mut Oracle) -> ServiceEvidence;
}

impl<F: FnMut(&ServiceId) -> ServiceEvidence> EvidenceSource for F {
    fn mine(&mut self, service: &ServiceId, _oracle: &mut Oracle) -> ServiceEvidence {
        self(service)
    }
}
