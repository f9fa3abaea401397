//! Synthetic microservice systems with injected faults, the evaluation
//! protocol and a single-shot comparison arm.

pub mod baseline;
pub mod eval;
pub mod scenario;
pub mod suite;
pub mod topology;

use rootscope_core::pipeline::PipelineError;
use rootscope_core::telemetry::ServiceId;
use thiserror::Error;

pub use eval::{evaluate, EvalResult, Outcome};
pub use scenario::{
    generate_quiet, generate_scenario, FaultSpec, FaultType, Manifest, PropagationConfig, Scenario, ScenarioConfig,
};
pub use suite::{plan_suite, run_scenario, run_suite, Arm, CasePlan, RunSettings, SuiteConfig, SuitePlan};
pub use topology::{generate_topology, SimTopology, TopologyConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    Config(String),
    #[error("fault target {0} is not in the topology")]
    UnknownTarget(ServiceId),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: String, message: String },
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Eval(String),
}
