//! Metric and trace anomaly detection.
//!
//! A one-step forecaster predicts each point from its predecessors; the
//! residual `e = y - ŷ` is standardized by the forecaster's in-sample residual
//! deviation and compared to separate spike and dip thresholds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{MetricSeries, PodId, Point, ServiceId, SpanRecord, SpanStatus, TimeWindow};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("insufficient history for {model}: need at least {required} points, got {got}")]
    InsufficientHistory { model: String, required: usize, got: usize },
    #[error("multivariate check needs at least 2 series, got {0}")]
    TooFewSeries(usize),
    #[error("series `{0}` is not aligned with the others")]
    Unaligned(String),
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FindingSource {
    Metric,
    Log,
    Trace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FindingKind {
    Spike,
    Dip,
    ErrorLog,
    WarnLog,
    LatencySpike,
    CallFailure,
    Multivariate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Warning,
    Severe,
}

macro_rules! wire_enum {
    ($t:ident { $($v:ident => $s:literal),+ $(,)? }) => {
        impl $t {
            pub fn as_str(&self) -> &'static str {
                match self { $($t::$v => $s),+ }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_uppercase().as_str() {
                    $($s => Ok($t::$v),)+
                    other => Err(format!("unknown {}: {other}", stringify!($t))),
                }
            }
        }
    };
}

wire_enum!(FindingSource { Metric => "METRIC", Log => "LOG", Trace => "TRACE" });
wire_enum!(FindingKind {
    Spike => "SPIKE",
    Dip => "DIP",
    ErrorLog => "ERROR_LOG",
    WarnLog => "WARN_LOG",
    LatencySpike => "LATENCY_SPIKE",
    CallFailure => "CALL_FAILURE",
    Multivariate => "MULTIVARIATE",
});
wire_enum!(Severity { Warning => "WARNING", Severe => "SEVERE" });

/// The values behind a residual-based finding, kept so the decision can be
/// re-derived independently.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualObservation {
    pub actual: f64,
    pub predicted: f64,
    pub residual_std: f64,
    pub threshold: f64,
}

impl ResidualObservation {
    pub fn z(&self) -> f64 {
        (self.actual - self.predicted) / self.residual_std
    }
}

/// One detected symptom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFinding {
    pub timestamp: f64,
    pub service: ServiceId,
    pub pod: Option<PodId>,
    pub source: FindingSource,
    pub kind: FindingKind,
    pub subject: String,
    pub severity: Severity,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<ResidualObservation>,
}

/// Orders findings by timestamp, then subject, then pod.
pub fn sort_findings(findings: &mut [AnomalyFinding]) {
    findings.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| a.subject.cmp(&b.subject))
            .then_with(|| a.pod.cmp(&b.pod))
            .then_with(|| a.kind.cmp(&b.kind))
    });
}

pub fn format_timestamp(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// The natural-language statement carried by metric findings:
/// `"<timestamp>: SPIKE of <metric_name>"` or `"<timestamp>: DIP of <metric_name>"`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricStatement {
    pub timestamp: f64,
    pub kind: FindingKind,
    pub metric: String,
}

impl fmt::Display for MetricStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} of {}",
            format_timestamp(self.timestamp),
            self.kind,
            self.metric
        )
    }
}

impl FromStr for MetricStatement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ts, rest) = s.split_once(": ").ok_or("missing `: ` separator")?;
        let timestamp: f64 = ts.parse().map_err(|_| format!("bad timestamp `{ts}`"))?;
        let (kind, metric) = rest.split_once(" of ").ok_or("missing ` of `")?;
        let kind = match kind {
            "SPIKE" => FindingKind::Spike,
            "DIP" => FindingKind::Dip,
            other => return Err(format!("unknown direction `{other}`")),
        };
        if metric.is_empty() {
            return Err("empty metric name".into());
        }
        Ok(Self {
            timestamp,
            kind,
            metric: metric.to_string(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Ar { order: usize },
    MovingAverage { window: usize },
}

impl ModelKind {
    pub fn min_history(&self) -> usize {
        match *self {
            ModelKind::Ar { order } => (2 * order).max(8),
            ModelKind::MovingAverage { window } => window + 1,
        }
    }

    fn lags(&self) -> usize {
        match *self {
            ModelKind::Ar { order } => order,
            ModelKind::MovingAverage { window } => window,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Ar { order } => write!(f, "AR({order})"),
            ModelKind::MovingAverage { window } => write!(f, "MOVING_AVERAGE({window})"),
        }
    }
}

/// Fitted one-step-ahead predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub kind: ModelKind,
    pub intercept: f64,
    /// Lag coefficients, `coefficients[i]` multiplies `y[t-1-i]`.
    pub coefficients: Vec<f64>,
    pub residual_std: f64,
}

impl Forecaster {
    pub fn lags(&self) -> usize {
        self.kind.lags()
    }

    /// Predicts the value following `history` (most recent last). `None`
    /// when fewer than `lags()` values are available.
    pub fn predict_next(&self, history: &[f64]) -> Option<f64> {
        let p = self.lags();
        if history.len() < p || p == 0 {
            return None;
        }
        let recent = &history[history.len() - p..];
        Some(match self.kind {
            ModelKind::MovingAverage { window } => recent.iter().sum::<f64>() / window as f64,
            ModelKind::Ar { .. } => {
                self.intercept
                    + self
                        .coefficients
                        .iter()
                        .zip(recent.iter().rev())
                        .map(|(a, y)| a * y)
                        .sum::<f64>()
            }
        })
    }

    /// In-sample one-step predictions for every index with enough history.
    pub fn in_sample(&self, values: &[f64]) -> Vec<(usize, f64)> {
        (self.lags()..values.len())
            .filter_map(|t| self.predict_next(&values[..t]).map(|p| (t, p)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    pub model: ModelKind,
    pub sigma_floor: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Ar { order: 3 },
            sigma_floor: 1e-6,
        }
    }
}

/// Fits the configured model on `history` and estimates the residual
/// deviation from the in-sample one-step residuals (floored at
/// `sigma_floor`, which also covers constant series).
pub fn fit_forecaster(history: &[f64], cfg: &ForecastConfig) -> Result<Forecaster, DetectError> {
    let required = cfg.model.min_history();
    if history.len() < required || cfg.model.lags() == 0 {
        return Err(DetectError::InsufficientHistory {
            model: cfg.model.to_string(),
            required: required.max(1),
            got: history.len(),
        });
    }
    let constant = history.windows(2).all(|w| w[0] == w[1]);
    let (intercept, coefficients) = match cfg.model {
        ModelKind::MovingAverage { window } => (0.0, vec![1.0 / window as f64; window]),
        // The collinear design would round the level off by a few ulps,
        // which the floored σ turns into findings on large flat series.
        ModelKind::Ar { order } if constant => (history[0], vec![0.0; order]),
        ModelKind::Ar { order } => fit_ar(history, order),
    };
    let mut f = Forecaster {
        kind: cfg.model,
        intercept,
        coefficients,
        residual_std: cfg.sigma_floor,
    };
    let residuals: Vec<f64> = f.in_sample(history).into_iter().map(|(t, p)| history[t] - p).collect();
    let fitted = match cfg.model {
        ModelKind::Ar { order } => order + 1,
        ModelKind::MovingAverage { .. } => 0,
    };
    let std = if constant {
        0.0
    } else {
        residual_deviation(&residuals, fitted)
    };
    f.residual_std = if std.is_finite() && std > cfg.sigma_floor {
        std
    } else {
        cfg.sigma_floor
    };
    Ok(f)
}

/// Ordinary least squares for `y_t = c + Σ a_i y_{t-i}`; solved through the
/// SVD so collinear designs (e.g. exact linear trends) still yield an exact
/// minimum-norm fit.
fn fit_ar(y: &[f64], p: usize) -> (f64, Vec<f64>) {
    let rows = y.len() - p;
    let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { y[p + r - c] });
    let b = DVector::from_iterator(rows, y[p..].iter().copied());
    let svd = x.svd(true, true);
    let beta = svd.solve(&b, 1e-10).unwrap_or_else(|_| DVector::zeros(p + 1));
    (beta[0], beta.iter().skip(1).copied().collect())
}

/// Residual deviation with the fitted parameter count removed from the
/// degrees of freedom (plain standard deviation when nothing was fitted).
fn residual_deviation(xs: &[f64], fitted: usize) -> f64 {
    if xs.len() <= fitted {
        return std_dev(xs);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (xs.len() - fitted) as f64).sqrt()
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Spike/dip thresholds in standardized-residual units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualDetector {
    pub lambda_spike: f64,
    pub lambda_dip: f64,
}

impl Default for ResidualDetector {
    fn default() -> Self {
        Self {
            lambda_spike: 3.0,
            lambda_dip: 3.0,
        }
    }
}

impl ResidualDetector {
    pub fn new(lambda_spike: f64, lambda_dip: f64) -> Result<Self, DetectError> {
        if !(lambda_spike > 0.0 && lambda_dip > 0.0) {
            return Err(DetectError::Config(format!(
                "thresholds must be positive (spike {lambda_spike}, dip {lambda_dip})"
            )));
        }
        Ok(Self {
            lambda_spike,
            lambda_dip,
        })
    }

    /// Classifies one standardized residual; severity is SEVERE beyond twice
    /// the applicable threshold.
    pub fn classify(&self, z: f64) -> Option<(FindingKind, Severity, f64)> {
        if z > self.lambda_spike {
            let sev = if z > 2.0 * self.lambda_spike {
                Severity::Severe
            } else {
                Severity::Warning
            };
            Some((FindingKind::Spike, sev, self.lambda_spike))
        } else if z < -self.lambda_dip {
            let sev = if -z > 2.0 * self.lambda_dip {
                Severity::Severe
            } else {
                Severity::Warning
            };
            Some((FindingKind::Dip, sev, self.lambda_dip))
        } else {
            None
        }
    }
}

/// Evaluates every point of `series` inside `window` against the
/// forecaster's one-step prediction from the preceding points of the same
/// series, emitting at most one SPIKE or DIP finding per point.
pub fn detect_residual_anomalies(
    series: &MetricSeries,
    window: &TimeWindow,
    forecaster: &Forecaster,
    detector: &ResidualDetector,
) -> Vec<AnomalyFinding> {
    let values = series.values();
    let mut out = Vec::new();
    for (t, p) in series.points.iter().enumerate() {
        if !window.contains(p.timestamp) {
            continue;
        }
        let Some(pred) = forecaster.predict_next(&values[..t]) else {
            continue;
        };
        let obs = ResidualObservation {
            actual: p.value,
            predicted: pred,
            residual_std: forecaster.residual_std,
            threshold: 0.0,
        };
        let Some((kind, severity, threshold)) = detector.classify(obs.z()) else {
            continue;
        };
        out.push(AnomalyFinding {
            timestamp: p.timestamp,
            service: series.service.clone(),
            pod: series.pod.clone(),
            source: FindingSource::Metric,
            kind,
            subject: series.metric_name.clone(),
            severity,
            detail: MetricStatement {
                timestamp: p.timestamp,
                kind,
                metric: series.metric_name.clone(),
            }
            .to_string(),
            observation: Some(ResidualObservation { threshold, ..obs }),
        });
    }
    out
}

/// Trace detection settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceDetectConfig {
    pub interval_secs: f64,
    /// A CALL_FAILURE is emitted when an interval holds more ERROR spans
    /// than this on one edge.
    pub failure_threshold: usize,
    pub forecast: ForecastConfig,
    pub detector: ResidualDetector,
}

impl Default for TraceDetectConfig {
    fn default() -> Self {
        Self {
            interval_secs: 60.0,
            failure_threshold: 3,
            forecast: ForecastConfig::default(),
            detector: ResidualDetector::default(),
        }
    }
}

pub fn edge_label(caller: &ServiceId, callee: &ServiceId) -> String {
    format!("{caller}→{callee}")
}

/// Per-edge forecasters, fitted once and reused across calls.
pub type ForecasterCache = BTreeMap<(ServiceId, ServiceId), Forecaster>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceDetection {
    pub findings: Vec<AnomalyFinding>,
    /// Edges whose latency history was too short to fit a forecaster.
    pub skipped_edges: usize,
}

/// Latency and failure detection over call edges.
///
/// Spans are bucketed per (caller, callee) edge into fixed intervals. The
/// mean latency of OK spans per interval forms a series whose `train`
/// portion fits a forecaster; intervals in `eval` are checked with the
/// residual detector (spikes only) and attributed to the callee. Intervals
/// with more ERROR spans than the failure threshold yield CALL_FAILURE.
pub fn detect_trace_anomalies(
    spans: &[&SpanRecord],
    train: &TimeWindow,
    eval: &TimeWindow,
    cache: &mut ForecasterCache,
    cfg: &TraceDetectConfig,
) -> TraceDetection {
    #[derive(Default)]
    struct Bin {
        ok_sum: f64,
        ok_n: usize,
        errors: usize,
    }
    let span_all = train.union(eval);
    let mut edges: BTreeMap<(ServiceId, ServiceId), BTreeMap<i64, Bin>> = BTreeMap::new();
    for s in spans {
        let Some(caller) = &s.caller else { continue };
        if !span_all.contains(s.start) {
            continue;
        }
        let bin = ((s.start - span_all.start) / cfg.interval_secs).floor() as i64;
        let b = edges
            .entry((caller.clone(), s.callee.clone()))
            .or_default()
            .entry(bin)
            .or_default();
        match s.status {
            SpanStatus::Ok => {
                b.ok_sum += s.duration_ms;
                b.ok_n += 1;
            }
            SpanStatus::Error => b.errors += 1,
        }
    }
    let mut out = TraceDetection::default();
    for ((caller, callee), bins) in edges {
        let label = edge_label(&caller, &callee);
        let bin_time = |k: i64| span_all.start + k as f64 * cfg.interval_secs;
        let points: Vec<Point> = bins
            .iter()
            .filter(|(_, b)| b.ok_n > 0)
            .map(|(&k, b)| Point {
                timestamp: bin_time(k),
                value: b.ok_sum / b.ok_n as f64,
            })
            .collect();
        let series = MetricSeries {
            service: callee.clone(),
            pod: None,
            metric_name: label.clone(),
            points,
        };
        let key = (caller.clone(), callee.clone());
        let forecaster = match cache.get(&key) {
            Some(f) => Some(f.clone()),
            None => {
                let history: Vec<f64> = series.points_in(train).iter().map(|p| p.value).collect();
                match fit_forecaster(&history, &cfg.forecast) {
                    Ok(f) => {
                        cache.insert(key, f.clone());
                        Some(f)
                    }
                    Err(_) => None,
                }
            }
        };
        match forecaster {
            Some(f) => {
                for mut finding in detect_residual_anomalies(&series, eval, &f, &cfg.detector) {
                    if finding.kind != FindingKind::Spike {
                        continue;
                    }
                    finding.source = FindingSource::Trace;
                    finding.kind = FindingKind::LatencySpike;
                    finding.detail = format!("{}: LATENCY_SPIKE of {}", format_timestamp(finding.timestamp), label);
                    out.findings.push(finding);
                }
            }
            None => out.skipped_edges += 1,
        }
        for (&k, b) in &bins {
            let t = bin_time(k);
            if !eval.contains(t) || b.errors <= cfg.failure_threshold {
                continue;
            }
            let severity = if b.errors > 2 * cfg.failure_threshold {
                Severity::Severe
            } else {
                Severity::Warning
            };
            out.findings.push(AnomalyFinding {
                timestamp: t,
                service: callee.clone(),
                pod: None,
                source: FindingSource::Trace,
                kind: FindingKind::CallFailure,
                subject: label.clone(),
                severity,
                detail: format!(
                    "{}: CALL_FAILURE of {} ({} failed calls)",
                    format_timestamp(t),
                    label,
                    b.errors
                ),
                observation: None,
            });
        }
    }
    sort_findings(&mut out.findings);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MultivariateVerdict {
    AnomalyExisting,
    AnomalyUnexisting,
}

impl fmt::Display for MultivariateVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MultivariateVerdict::AnomalyExisting => "anomaly existing",
            MultivariateVerdict::AnomalyUnexisting => "anomaly unexisting",
        })
    }
}

/// Slot for joint detectors over the metric set of one pod.
pub trait MultivariateDetector {
    fn check(&self, series: &[MetricSeries]) -> Result<MultivariateVerdict, DetectError>;
}

/// Reconstructs each series from the others by least squares fitted on a
/// training prefix; the verdict is ANOMALY_EXISTING when any standardized
/// reconstruction error after the prefix exceeds `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresReconstruction {
    /// Number of leading aligned points used for fitting.
    pub train_len: usize,
    pub lambda: f64,
    pub sigma_floor: f64,
}

impl LeastSquaresReconstruction {
    /// Largest standardized reconstruction error after the training prefix.
    pub fn max_score(&self, series: &[MetricSeries]) -> Result<f64, DetectError> {
        if series.len() < 2 {
            return Err(DetectError::TooFewSeries(series.len()));
        }
        let stamps: Vec<f64> = series[0].points.iter().map(|p| p.timestamp).collect();
        for s in &series[1..] {
            let same = s.points.len() == stamps.len() && s.points.iter().zip(&stamps).all(|(p, t)| p.timestamp == *t);
            if !same {
                return Err(DetectError::Unaligned(s.metric_name.clone()));
            }
        }
        let n = stamps.len();
        let train = self.train_len.min(n);
        let k = series.len();
        if train < k + 1 {
            return Err(DetectError::InsufficientHistory {
                model: "least-squares reconstruction".into(),
                required: k + 1,
                got: train,
            });
        }
        let mut worst = 0.0f64;
        for target in 0..k {
            let others: Vec<usize> = (0..k).filter(|&j| j != target).collect();
            let design = |rows: std::ops::Range<usize>| {
                DMatrix::from_fn(rows.len(), others.len() + 1, |r, c| {
                    if c == 0 {
                        1.0
                    } else {
                        series[others[c - 1]].points[rows.start + r].value
                    }
                })
            };
            let x = design(0..train);
            let y = DVector::from_iterator(train, series[target].points[..train].iter().map(|p| p.value));
            let beta = x
                .clone()
                .svd(true, true)
                .solve(&y, 1e-10)
                .unwrap_or_else(|_| DVector::zeros(others.len() + 1));
            let resid = &y - &x * &beta;
            let sigma = std_dev(resid.as_slice()).max(self.sigma_floor);
            if train == n {
                continue;
            }
            let xe = design(train..n);
            let ye = DVector::from_iterator(n - train, series[target].points[train..].iter().map(|p| p.value));
            let err = &ye - &xe * &beta;
            for e in err.iter() {
                worst = worst.max(e.abs() / sigma);
            }
        }
        Ok(worst)
    }
}

impl MultivariateDetector for LeastSquaresReconstruction {
    fn check(&self, series: &[MetricSeries]) -> Result<MultivariateVerdict, DetectError> {
        Ok(if self.max_score(series)? > self.lambda {
            MultivariateVerdict::AnomalyExisting
        } else {
            MultivariateVerdict::AnomalyUnexisting
        })
    }
}

pub fn multivariate_check(
    series: &[MetricSeries],
    detector: &dyn MultivariateDetector,
) -> Result<MultivariateVerdict, DetectError> {
    detector.check(series)
}
