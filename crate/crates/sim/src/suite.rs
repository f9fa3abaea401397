//! Scenario suites: planning, emission and parallel diagnosis.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rootscope_core::config::DetectorConfig;
use rootscope_core::kb::KnowledgeBase;
use rootscope_core::mcts::MctsConfig;
use rootscope_core::oracle::Oracle;
use rootscope_core::pipeline::{diagnose, DiagnoseOptions, Diagnosis};

use crate::baseline::baseline_single_shot;
use crate::eval::Outcome;
use crate::scenario::{generate_scenario, write_json, FaultSpec, FaultType, Manifest, Scenario, ScenarioConfig};
use crate::topology::{generate_topology, SimTopology, TopologyConfig};
use crate::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub topology: TopologyConfig,
    pub scenario: ScenarioConfig,
    pub scenarios: usize,
    pub fault_minutes: usize,
    /// Earliest and latest fault start, in minutes from the horizon start.
    pub start_range: (usize, usize),
    /// Restrict targets to the deepest layer.
    pub deepest_targets: bool,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            scenario: ScenarioConfig::default(),
            scenarios: 50,
            fault_minutes: 10,
            start_range: (35, 45),
            deepest_targets: false,
            seed: 7,
        }
    }
}

impl SuiteConfig {
    /// Same seed everywhere: topology, fault plan and emission.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.topology.seed = seed;
        self
    }

    /// Deep single-caller chains whose entry services show more symptoms
    /// than the faulty service.
    pub fn propagation_confusion(scenarios: usize, seed: u64) -> Self {
        let mut cfg = SuiteConfig {
            scenarios,
            deepest_targets: true,
            ..SuiteConfig::default()
        }
        .with_seed(seed);
        cfg.topology.extra_caller_prob = 0.0;
        cfg.scenario.propagation.entry_boost_minutes = Some(10);
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasePlan {
    pub id: String,
    pub fault: FaultSpec,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SuitePlan {
    pub config: SuiteConfig,
    pub topology: SimTopology,
    pub cases: Vec<CasePlan>,
}

/// Fault types cycle through all six kinds; targets and start minutes are
/// drawn from the suite seed. The gateway (first service) is never a target.
pub fn plan_suite(cfg: &SuiteConfig) -> Result<SuitePlan, SimError> {
    let topology = generate_topology(&cfg.topology)?;
    let (lo, hi) = cfg.start_range;
    if lo > hi || hi + cfg.fault_minutes > cfg.scenario.horizon_minutes || lo < cfg.scenario.window_start_minute {
        return Err(SimError::Config(format!(
            "start range {lo}..={hi} does not fit the window"
        )));
    }
    let deepest = topology.services.iter().map(|s| s.layer).max().unwrap_or(0);
    let candidates: Vec<_> = topology
        .services
        .iter()
        .filter(|s| s.layer > 0 && (!cfg.deepest_targets || s.layer == deepest))
        .map(|s| s.id.clone())
        .collect();
    if candidates.is_empty() {
        return Err(SimError::Config("topology has no service below the gateway".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let cases = (0..cfg.scenarios)
        .map(|i| {
            let kind = FaultType::ALL[i % FaultType::ALL.len()];
            CasePlan {
                id: format!("case-{i:03}"),
                fault: FaultSpec {
                    fault_type: kind,
                    target: candidates.choose(&mut rng).expect("non-empty").clone(),
                    start_minute: rng.random_range(lo..=hi),
                    duration_minutes: cfg.fault_minutes,
                    magnitude: kind.default_magnitude(),
                },
                seed: rng.random(),
            }
        })
        .collect();
    Ok(SuitePlan {
        config: cfg.clone(),
        topology,
        cases,
    })
}

impl SuitePlan {
    pub fn scenario(&self, case: &CasePlan) -> Result<Scenario, SimError> {
        generate_scenario(&self.topology, &case.fault, &self.config.scenario, case.seed)
    }

    /// Writes one directory per case plus `suite.json` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<Manifest>, SimError> {
        let mut manifests = Vec::with_capacity(self.cases.len());
        for case in &self.cases {
            let s = self.scenario(case)?;
            s.write_to(&dir.join(&case.id))?;
            manifests.push(s.manifest);
        }
        write_json(&dir.join("suite.json"), &self.config)?;
        Ok(manifests)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Pipeline,
    Baseline,
}

/// Detector, knowledge base and search settings shared by every case.
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub detector: DetectorConfig,
    pub kb: KnowledgeBase,
    pub mcts: MctsConfig,
    pub top_k: usize,
    pub tau: f64,
}

impl RunSettings {
    pub fn standard() -> Self {
        Self {
            top_k: 5,
            tau: 0.8,
            ..Self::default()
        }
    }

    pub fn options(&self) -> DiagnoseOptions<'_> {
        DiagnoseOptions {
            detector: &self.detector,
            kb: &self.kb,
            mcts: &self.mcts,
            top_k: self.top_k,
            tau: self.tau,
        }
    }
}

/// Diagnoses one emitted scenario with the deterministic oracle.
pub fn run_scenario(scenario: &Scenario, settings: &RunSettings, arm: Arm) -> Result<Diagnosis, SimError> {
    let mut oracle = Oracle::deterministic().without_transcript();
    let opts = settings.options();
    let window = scenario.manifest.window;
    Ok(match arm {
        Arm::Pipeline => diagnose(&scenario.telemetry, &scenario.dependency, window, &opts, &mut oracle)?,
        Arm::Baseline => baseline_single_shot(&scenario.telemetry, window, &opts, &mut oracle),
    })
}

/// Emits and diagnoses every case on `threads` workers, returning results
/// in case order.
pub fn run_suite(
    plan: &SuitePlan,
    settings: &RunSettings,
    arm: Arm,
    threads: usize,
) -> Result<Vec<(Manifest, Outcome)>, SimError> {
    let next = AtomicUsize::new(0);
    type Slot = Option<Result<(Manifest, Outcome), SimError>>;
    let results: Mutex<Vec<Slot>> = Mutex::new((0..plan.cases.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(case) = plan.cases.get(i) else { break };
                let r = plan.scenario(case).and_then(|s| {
                    let d = run_scenario(&s, settings, arm)?;
                    Ok((s.manifest, Outcome::from(&d)))
                });
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every case ran"))
        .collect()
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(8)
}
