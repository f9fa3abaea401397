//! Detector and run configuration files. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alarm::AlarmRules;
use crate::detect::{ForecastConfig, LeastSquaresReconstruction, ModelKind, ResidualDetector, TraceDetectConfig};
use crate::logmine::LogMinerConfig;
use crate::mcts::MctsConfig;
use crate::oracle::OracleMode;
use crate::telemetry::TimeWindow;
use crate::verdict::glob_match;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Threshold override for metrics whose name matches `metric` (a glob).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaOverride {
    pub metric: String,
    #[serde(default)]
    pub lambda_spike: Option<f64>,
    #[serde(default)]
    pub lambda_dip: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceSettings {
    pub interval_secs: f64,
    pub failure_threshold: usize,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self {
            interval_secs: 60.0,
            failure_threshold: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultivariateSettings {
    pub enabled: bool,
    /// Defaults to the spike threshold when unset.
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub model: ModelKind,
    /// Used when the history is too short for `model`.
    pub fallback: Option<ModelKind>,
    pub sigma_floor: f64,
    pub lambda_spike: f64,
    pub lambda_dip: f64,
    /// First matching override wins.
    pub overrides: Vec<LambdaOverride>,
    pub trace: TraceSettings,
    pub multivariate: MultivariateSettings,
    pub alarm: AlarmRules,
    pub logs: LogMinerConfig,
    /// Per-service cap on findings handed to scoring.
    pub e_max: usize,
    /// A pod counts as silent after this long without samples in the window.
    pub silence_secs: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ar { order: 3 },
            fallback: Some(ModelKind::MovingAverage { window: 5 }),
            sigma_floor: 1e-6,
            lambda_spike: 3.0,
            lambda_dip: 3.0,
            overrides: Vec::new(),
            trace: TraceSettings::default(),
            multivariate: MultivariateSettings::default(),
            alarm: AlarmRules::default(),
            logs: LogMinerConfig::default(),
            e_max: 30,
            silence_secs: 300.0,
        }
    }
}

impl DetectorConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        for m in std::iter::once(&self.model).chain(self.fallback.as_ref()) {
            let lags = match *m {
                ModelKind::Ar { order } => order,
                ModelKind::MovingAverage { window } => window,
            };
            if lags == 0 {
                return bad(format!("model {m} needs at least one lag"));
            }
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive".into());
        }
        ResidualDetector::new(self.lambda_spike, self.lambda_dip).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in &self.overrides {
            if glob::Pattern::new(&o.metric).is_err() {
                return bad(format!("bad metric glob `{}`", o.metric));
            }
            if o.lambda_spike.is_some_and(|v| !(v > 0.0)) || o.lambda_dip.is_some_and(|v| !(v > 0.0)) {
                return bad(format!("override `{}` thresholds must be positive", o.metric));
            }
        }
        if !(self.trace.interval_secs > 0.0) {
            return bad("trace.interval_secs must be positive".into());
        }
        if self.multivariate.lambda.is_some_and(|v| !(v > 0.0)) {
            return bad("multivariate.lambda must be positive".into());
        }
        if !(self.silence_secs > 0.0) {
            return bad("silence_secs must be positive".into());
        }
        if self.e_max == 0 {
            return bad("e_max must be at least 1".into());
        }
        let l = &self.logs;
        if !(0.0..=1.0).contains(&l.drain.similarity) || l.drain.depth < 2 {
            return bad("drain needs depth >= 2 and similarity in [0, 1]".into());
        }
        if l.budget == 0 || l.gmm.k == 0 || !(l.bin_secs > 0.0) {
            return bad("log budget, gmm.k and bin_secs must be positive".into());
        }
        if l.max_findings == 0 {
            return bad("logs.max_findings must be at least 1".into());
        }
        for b in &self.alarm.metric_bounds {
            if glob::Pattern::new(&b.metric).is_err() {
                return bad(format!("bad alarm metric glob `{}`", b.metric));
            }
        }
        Ok(())
    }

    pub fn forecast(&self) -> ForecastConfig {
        ForecastConfig {
            model: self.model,
            sigma_floor: self.sigma_floor,
        }
    }

    pub fn fallback_forecast(&self) -> Option<ForecastConfig> {
        self.fallback.map(|model| ForecastConfig {
            model,
            sigma_floor: self.sigma_floor,
        })
    }

    pub fn detector_for(&self, metric: &str) -> ResidualDetector {
        let o = self.overrides.iter().find(|o| glob_match(&o.metric, metric));
        ResidualDetector {
            lambda_spike: o.and_then(|o| o.lambda_spike).unwrap_or(self.lambda_spike),
            lambda_dip: o.and_then(|o| o.lambda_dip).unwrap_or(self.lambda_dip),
        }
    }

    pub fn trace_config(&self) -> TraceDetectConfig {
        TraceDetectConfig {
            interval_secs: self.trace.interval_secs,
            failure_threshold: self.trace.failure_threshold,
            forecast: self.forecast(),
            detector: ResidualDetector {
                lambda_spike: self.lambda_spike,
                lambda_dip: self.lambda_dip,
            },
        }
    }

    pub fn multivariate_detector(&self, train_len: usize) -> LeastSquaresReconstruction {
        LeastSquaresReconstruction {
            train_len,
            lambda: self.multivariate.lambda.unwrap_or(self.lambda_spike),
            sigma_floor: self.sigma_floor,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryPaths {
    pub metrics: Option<PathBuf>,
    pub logs: Option<PathBuf>,
    pub spans: Option<PathBuf>,
    /// Overrides the span-derived dependency graph.
    pub topology: Option<PathBuf>,
    /// JSON object mapping pod names to services.
    pub pod_map: Option<PathBuf>,
}

impl TelemetryPaths {
    /// Conventional file names inside one directory, keeping those present.
    pub fn in_dir(dir: &Path) -> Self {
        let pick = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            metrics: pick("metrics.csv"),
            logs: pick("logs.jsonl"),
            spans: pick("spans.csv"),
            topology: pick("topology.json"),
            pod_map: pick("pod_map.json"),
        }
    }

    fn all_mut(&mut self) -> [&mut Option<PathBuf>; 5] {
        [
            &mut self.metrics,
            &mut self.logs,
            &mut self.spans,
            &mut self.topology,
            &mut self.pod_map,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub telemetry: TelemetryPaths,
    pub window: Option<TimeWindow>,
    /// Detector config file; defaults apply when absent.
    pub detector: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub oracle: OracleMode,
    pub mcts: MctsConfig,
    pub kb_top_k: usize,
    pub kb_tau: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            telemetry: TelemetryPaths::default(),
            window: None,
            detector: None,
            kb: None,
            oracle: OracleMode::Deterministic,
            mcts: MctsConfig::default(),
            kb_top_k: 5,
            kb_tau: 0.8,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a run config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = read_json(path)?;
        if let Some(base) = path.parent() {
            cfg.resolve(base);
        }
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in self.telemetry.all_mut().into_iter().flatten() {
            fix(p);
        }
        for p in [&mut self.detector, &mut self.kb].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.telemetry;
        if t.metrics.is_none() && t.logs.is_none() && t.spans.is_none() {
            return Err(ConfigError::Invalid("no telemetry files configured".into()));
        }
        match &self.window {
            None => return Err(ConfigError::Invalid("no diagnosis window".into())),
            Some(w) => {
                TimeWindow::new(w.start, w.end).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        self.mcts.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if let OracleMode::External(c) = &self.oracle {
            c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.kb_top_k == 0 {
            return Err(ConfigError::Invalid("kb_top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.kb_tau) {
            return Err(ConfigError::Invalid("kb_tau must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_defaults_round_trip() {
        let cfg = DetectorConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: DetectorConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"lambda": 2}"#).is_err());
        assert!(serde_json::from_str::<DetectorConfig>(r#"{"logs": {"budgt": 2}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"iterations": 3}"#).is_err());
    }

    #[test]
    fn overrides_by_glob() {
        let cfg: DetectorConfig = serde_json::from_str(
            r#"{"overrides": [{"metric": "cpu*", "lambda_spike": 5.0}], "model": {"kind": "ar", "order": 2}}"#,
        )
        .unwrap();
        assert_eq!(cfg.detector_for("cpu_usage").lambda_spike, 5.0);
        assert_eq!(cfg.detector_for("cpu_usage").lambda_dip, 3.0);
        assert_eq!(cfg.detector_for("memory_usage").lambda_spike, 3.0);
        assert_eq!(cfg.model, ModelKind::Ar { order: 2 });
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = DetectorConfig {
            lambda_dip: 0.0,
            ..DetectorConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = DetectorConfig {
            model: ModelKind::Ar { order: 0 },
            ..DetectorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn run_config_validation() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_err());
        cfg.telemetry.metrics = Some("m.csv".into());
        assert!(cfg.validate().is_err());
        cfg.window = Some(TimeWindow { start: 10.0, end: 5.0 });
        assert!(cfg.validate().is_err());
        cfg.window = Some(TimeWindow { start: 0.0, end: 5.0 });
        cfg.validate().unwrap();
        cfg.oracle = OracleMode::External(Default::default());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        fs::write(
            &p,
            r#"{"telemetry": {"metrics": "data/m.csv"}, "window": {"start": 0, "end": 60}, "out": "/abs/out"}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.telemetry.metrics.unwrap(), dir.path().join("data/m.csv"));
        assert_eq!(cfg.out, PathBuf::from("/abs/out"));
    }
}
