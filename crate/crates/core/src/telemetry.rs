//! Canonical telemetry model and file ingestion.
//!
//! Every loader normalizes timestamps to fractional epoch seconds, restricts
//! records to a [`TimeWindow`] (`start <= t < end`) and skips malformed rows
//! instead of aborting; the number of skipped rows is reported alongside the
//! parsed records.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: expected `{expected}`, found `{found}`")]
    Header {
        path: String,
        expected: String,
        found: String,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("malformed topology file {path}: {source}")]
    Topology {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid time window: start {start} must be before end {end}")]
    Window { start: f64, end: f64 },
}

/// A logical service name.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(pub String);

/// A pod (instance) name; owned by exactly one service.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PodId(pub String);

macro_rules! string_id {
    ($t:ident) => {
        impl $t {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $t {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(ServiceId);
string_id!(PodId);

/// Resolves the owning service of a pod.
///
/// Convention: a trailing `-<digits>` suffix is stripped, together with any
/// digits directly before it (`adservice-0` and `adservice2-0` both map to
/// `adservice`). Explicit overrides win over the convention.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PodMapper {
    #[serde(default)]
    pub overrides: BTreeMap<PodId, ServiceId>,
}

impl PodMapper {
    pub fn with_overrides(overrides: BTreeMap<PodId, ServiceId>) -> Self {
        Self { overrides }
    }

    pub fn load(path: &Path) -> Result<Self, TelemetryError> {
        let text = read_to_string(path)?;
        let overrides: BTreeMap<PodId, ServiceId> =
            serde_json::from_str(&text).map_err(|source| TelemetryError::Topology {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self { overrides })
    }

    pub fn service_of(&self, pod: &PodId) -> ServiceId {
        if let Some(s) = self.overrides.get(pod) {
            return s.clone();
        }
        ServiceId(service_by_convention(pod.as_str()).to_string())
    }
}

fn service_by_convention(pod: &str) -> &str {
    let Some((head, tail)) = pod.rsplit_once('-') else {
        return pod;
    };
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) || head.is_empty() {
        return pod;
    }
    let trimmed = head.trim_end_matches(|c: char| c.is_ascii_digit());
    if trimmed.is_empty() || trimmed.ends_with('-') {
        head
    } else {
        trimmed
    }
}

/// Half-open interval `[start, end)` in epoch seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self, TelemetryError> {
        if !(start < end) {
            return Err(TelemetryError::Window { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// The window of equal length immediately preceding this one.
    pub fn preceding(&self) -> TimeWindow {
        TimeWindow {
            start: self.start - self.len(),
            end: self.start,
        }
    }

    /// Smallest window covering both.
    pub fn union(&self, other: &TimeWindow) -> TimeWindow {
        TimeWindow {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub timestamp: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub service: ServiceId,
    pub pod: Option<PodId>,
    pub metric_name: String,
    pub points: Vec<Point>,
}

impl MetricSeries {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    /// Points with timestamps inside `window`, in order.
    pub fn points_in(&self, window: &TimeWindow) -> &[Point] {
        let lo = self.points.partition_point(|p| p.timestamp < window.start);
        let hi = self.points.partition_point(|p| p.timestamp < window.end);
        &self.points[lo..hi]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: f64,
    pub service: ServiceId,
    pub pod: PodId,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SpanStatus {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub trace_id: String,
    pub span_id: String,
    pub parent_span_id: Option<String>,
    pub caller: Option<ServiceId>,
    pub callee: ServiceId,
    pub start: f64,
    pub duration_ms: f64,
    pub status: SpanStatus,
}

/// Records parsed from one file plus the count of rows that were skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Loaded<T> {
    pub items: Vec<T>,
    pub dropped_rows: usize,
}

pub const METRICS_HEADER: [&str; 5] = ["timestamp", "service", "pod", "metric_name", "value"];
pub const SPANS_HEADER: [&str; 8] = [
    "trace_id",
    "span_id",
    "parent_span_id",
    "caller",
    "callee",
    "start",
    "duration_ms",
    "status",
];

/// Parses a timestamp given as epoch seconds, epoch milliseconds (values
/// above 1e11) or an RFC 3339 string.
pub fn parse_timestamp(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    if let Ok(v) = raw.parse::<f64>() {
        if !v.is_finite() {
            return None;
        }
        return Some(if v.abs() > 1e11 { v / 1000.0 } else { v });
    }
    chrono::DateTime::parse_from_rfc3339(raw)
        .ok()
        .map(|dt| dt.timestamp() as f64 + f64::from(dt.timestamp_subsec_nanos()) / 1e9)
}

fn json_timestamp(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().and_then(|f| parse_timestamp(&f.to_string())),
        serde_json::Value::String(s) => parse_timestamp(s),
        _ => None,
    }
}

fn read_to_string(path: &Path) -> Result<String, TelemetryError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| TelemetryError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(s)
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>, TelemetryError> {
    let file = File::open(path).map_err(|source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|source| TelemetryError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != expected {
        return Err(TelemetryError::Header {
            path: path.display().to_string(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(rdr)
}

/// Loads the metrics CSV, returning one series per (pod, metric_name).
///
/// Rows without a pod are service-level series. When the `service` column is
/// empty the owning service is derived from the pod through `mapper`.
pub fn load_metrics(
    path: &Path,
    window: &TimeWindow,
    mapper: &PodMapper,
) -> Result<Loaded<MetricSeries>, TelemetryError> {
    let mut rdr = open_csv(path, &METRICS_HEADER)?;
    let mut dropped = 0usize;
    let mut groups: BTreeMap<(ServiceId, Option<PodId>, String), Vec<Point>> = BTreeMap::new();
    for row in rdr.records() {
        let Ok(row) = row else {
            dropped += 1;
            continue;
        };
        if row.len() != METRICS_HEADER.len() {
            dropped += 1;
            continue;
        }
        let (Some(ts), Ok(value)) = (parse_timestamp(&row[0]), row[4].trim().parse::<f64>()) else {
            dropped += 1;
            continue;
        };
        let metric = row[3].trim();
        if !value.is_finite() || metric.is_empty() {
            dropped += 1;
            continue;
        }
        let pod = Some(row[2].trim()).filter(|p| !p.is_empty()).map(PodId::from);
        let service = match (row[1].trim(), &pod) {
            (s, _) if !s.is_empty() => ServiceId::from(s),
            ("", Some(p)) => mapper.service_of(p),
            _ => {
                dropped += 1;
                continue;
            }
        };
        if !window.contains(ts) {
            continue;
        }
        groups
            .entry((service, pod, metric.to_string()))
            .or_default()
            .push(Point { timestamp: ts, value });
    }
    let mut items = Vec::with_capacity(groups.len());
    for ((service, pod, metric_name), mut points) in groups {
        points.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let before = points.len();
        points.dedup_by(|b, a| a.timestamp == b.timestamp);
        dropped += before - points.len();
        if points.is_empty() {
            continue;
        }
        items.push(MetricSeries {
            service,
            pod,
            metric_name,
            points,
        });
    }
    Ok(Loaded {
        items,
        dropped_rows: dropped,
    })
}

#[derive(Deserialize)]
struct RawLog {
    timestamp: serde_json::Value,
    #[serde(default)]
    service: Option<String>,
    pod: String,
    message: String,
}

/// Loads JSON Lines logs. Blank messages and unparseable lines are dropped.
pub fn load_logs(path: &Path, window: &TimeWindow, mapper: &PodMapper) -> Result<Loaded<LogRecord>, TelemetryError> {
    let file = File::open(path).map_err(|source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut items = Vec::new();
    let mut dropped = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| TelemetryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(raw) = serde_json::from_str::<RawLog>(&line) else {
            dropped += 1;
            continue;
        };
        let message = raw.message.trim();
        let Some(ts) = json_timestamp(&raw.timestamp) else {
            dropped += 1;
            continue;
        };
        if message.is_empty() || raw.pod.trim().is_empty() {
            dropped += 1;
            continue;
        }
        if !window.contains(ts) {
            continue;
        }
        let pod = PodId::from(raw.pod.trim());
        let service = match raw.service.as_deref().map(str::trim) {
            Some(s) if !s.is_empty() => ServiceId::from(s),
            _ => mapper.service_of(&pod),
        };
        items.push(LogRecord {
            timestamp: ts,
            service,
            pod,
            message: message.to_string(),
        });
    }
    items.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(Loaded {
        items,
        dropped_rows: dropped,
    })
}

/// Loads the spans CSV. Negative durations and span ids repeated within a
/// trace are dropped.
pub fn load_spans(path: &Path, window: &TimeWindow) -> Result<Loaded<SpanRecord>, TelemetryError> {
    let mut rdr = open_csv(path, &SPANS_HEADER)?;
    let mut dropped = 0usize;
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut items = Vec::new();
    for row in rdr.records() {
        let Ok(row) = row else {
            dropped += 1;
            continue;
        };
        if row.len() != SPANS_HEADER.len() {
            dropped += 1;
            continue;
        }
        let opt = |i: usize| Some(row[i].trim()).filter(|s| !s.is_empty()).map(str::to_string);
        let (Some(trace_id), Some(span_id), Some(callee)) = (opt(0), opt(1), opt(4)) else {
            dropped += 1;
            continue;
        };
        let (Some(start), Ok(duration_ms)) = (parse_timestamp(&row[5]), row[6].trim().parse::<f64>()) else {
            dropped += 1;
            continue;
        };
        if !(duration_ms >= 0.0) || !duration_ms.is_finite() {
            dropped += 1;
            continue;
        }
        let status = match row[7].trim().to_ascii_uppercase().as_str() {
            "OK" => SpanStatus::Ok,
            "ERROR" => SpanStatus::Error,
            _ => {
                dropped += 1;
                continue;
            }
        };
        if !window.contains(start) {
            continue;
        }
        if !seen.insert((trace_id.clone(), span_id.clone())) {
            dropped += 1;
            continue;
        }
        items.push(SpanRecord {
            trace_id,
            span_id,
            parent_span_id: opt(2),
            caller: opt(3).map(ServiceId),
            callee: ServiceId(callee),
            start,
            duration_ms,
            status,
        });
    }
    items.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(Loaded {
        items,
        dropped_rows: dropped,
    })
}

/// Directed caller → callee service graph without self-loops.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGraph {
    nodes: BTreeSet<ServiceId>,
    edges: BTreeSet<(ServiceId, ServiceId)>,
    #[serde(default)]
    pub self_loops_dropped: usize,
    #[serde(default)]
    pub dangling_parents: usize,
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    edges: Vec<TopologyEdge>,
}

#[derive(Serialize, Deserialize)]
struct TopologyEdge {
    caller: String,
    callee: String,
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges<I, A, B>(edges: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<ServiceId>,
        B: Into<ServiceId>,
    {
        let mut g = Self::new();
        for (a, b) in edges {
            g.add_edge(a.into(), b.into());
        }
        g
    }

    pub fn add_node(&mut self, s: ServiceId) {
        self.nodes.insert(s);
    }

    /// Adds an edge; self-loops are counted and dropped.
    pub fn add_edge(&mut self, caller: ServiceId, callee: ServiceId) {
        self.nodes.insert(caller.clone());
        self.nodes.insert(callee.clone());
        if caller == callee {
            self.self_loops_dropped += 1;
            return;
        }
        self.edges.insert((caller, callee));
    }

    pub fn nodes(&self) -> &BTreeSet<ServiceId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(ServiceId, ServiceId)> {
        &self.edges
    }

    pub fn contains(&self, s: &ServiceId) -> bool {
        self.nodes.contains(s)
    }

    pub fn has_edge(&self, caller: &ServiceId, callee: &ServiceId) -> bool {
        self.edges.contains(&(caller.clone(), callee.clone()))
    }

    pub fn callees(&self) -> BTreeMap<&ServiceId, Vec<&ServiceId>> {
        let mut out: BTreeMap<&ServiceId, Vec<&ServiceId>> = self.nodes.iter().map(|n| (n, Vec::new())).collect();
        for (a, b) in &self.edges {
            out.entry(a).or_default().push(b);
        }
        out
    }

    pub fn callers(&self) -> BTreeMap<&ServiceId, Vec<&ServiceId>> {
        let mut out: BTreeMap<&ServiceId, Vec<&ServiceId>> = self.nodes.iter().map(|n| (n, Vec::new())).collect();
        for (a, b) in &self.edges {
            out.entry(b).or_default().push(a);
        }
        out
    }

    /// Loads a topology file of the form `{"edges":[{"caller":"A","callee":"B"}]}`.
    pub fn load_topology(path: &Path) -> Result<Self, TelemetryError> {
        let text = read_to_string(path)?;
        let file: TopologyFile = serde_json::from_str(&text).map_err(|source| TelemetryError::Topology {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_edges(file.edges.into_iter().map(|e| (e.caller, e.callee))))
    }

    pub fn to_topology_json(&self) -> serde_json::Value {
        let file = TopologyFile {
            edges: self
                .edges
                .iter()
                .map(|(a, b)| TopologyEdge {
                    caller: a.0.clone(),
                    callee: b.0.clone(),
                })
                .collect(),
        };
        serde_json::to_value(file).expect("topology serializes")
    }
}

/// Derives the call graph from spans. A span's caller is its explicit
/// `caller` field or, failing that, the callee of its parent span within the
/// same trace. Parents that cannot be resolved are counted and the span is
/// treated as a root.
pub fn dependency_from_spans(spans: &[SpanRecord]) -> DependencyGraph {
    let mut by_id: HashMap<(&str, &str), &ServiceId> = HashMap::new();
    for s in spans {
        by_id.insert((s.trace_id.as_str(), s.span_id.as_str()), &s.callee);
    }
    let mut g = DependencyGraph::new();
    for s in spans {
        g.add_node(s.callee.clone());
        let resolved = s.parent_span_id.as_deref().and_then(|p| {
            let hit = by_id.get(&(s.trace_id.as_str(), p)).copied();
            if hit.is_none() {
                g.dangling_parents += 1;
            }
            hit
        });
        let caller = s.caller.as_ref().or(resolved);
        if let Some(c) = caller {
            g.add_edge(c.clone(), s.callee.clone());
        }
    }
    g
}

/// All telemetry for one diagnosis, with ingestion counters.
#[derive(Clone, Debug, Default)]
pub struct Telemetry {
    pub metrics: Vec<MetricSeries>,
    pub logs: Vec<LogRecord>,
    pub spans: Vec<SpanRecord>,
    pub dropped_metric_rows: usize,
    pub dropped_log_rows: usize,
    pub dropped_span_rows: usize,
}

impl Telemetry {
    /// Pods observed per service across all sources.
    pub fn pods_by_service(&self) -> BTreeMap<ServiceId, BTreeSet<PodId>> {
        let mut out: BTreeMap<ServiceId, BTreeSet<PodId>> = BTreeMap::new();
        for m in &self.metrics {
            if let Some(p) = &m.pod {
                out.entry(m.service.clone()).or_default().insert(p.clone());
            }
        }
        for l in &self.logs {
            out.entry(l.service.clone()).or_default().insert(l.pod.clone());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn wide() -> TimeWindow {
        TimeWindow::new(0.0, 1e10).unwrap()
    }

    #[test]
    fn pod_convention() {
        let m = PodMapper::default();
        for (pod, svc) in [
            ("adservice-0", "adservice"),
            ("adservice-12", "adservice"),
            ("adservice2-0", "adservice"),
            ("adservice", "adservice"),
            ("cart-svc-1", "cart-svc"),
            ("x-", "x-"),
            ("12-3", "12"),
        ] {
            assert_eq!(m.service_of(&PodId::from(pod)).as_str(), svc, "{pod}");
        }
        let mut o = BTreeMap::new();
        o.insert(PodId::from("adservice-0"), ServiceId::from("ads"));
        assert_eq!(
            PodMapper::with_overrides(o)
                .service_of(&PodId::from("adservice-0"))
                .as_str(),
            "ads"
        );
    }

    #[test]
    fn window_rejects_empty() {
        assert!(TimeWindow::new(5.0, 5.0).is_err());
        let w = TimeWindow::new(10.0, 20.0).unwrap();
        assert!(w.contains(10.0) && !w.contains(20.0));
        assert_eq!(w.preceding(), TimeWindow { start: 0.0, end: 10.0 });
    }

    #[test]
    fn timestamps_normalize() {
        assert_eq!(parse_timestamp("1700000000"), Some(1_700_000_000.0));
        assert_eq!(parse_timestamp("1700000000500"), Some(1_700_000_000.5));
        assert_eq!(parse_timestamp("2023-11-14T22:13:20Z"), Some(1_700_000_000.0));
        assert_eq!(parse_timestamp("nope"), None);
    }

    #[test]
    fn metrics_three_rows_one_series() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "m.csv",
            "timestamp,service,pod,metric_name,value\n3,a,podA,cpu,1\n1,a,podA,cpu,2\n2,a,podA,cpu,3\n",
        );
        let out = load_metrics(&p, &wide(), &PodMapper::default()).unwrap();
        assert_eq!(out.items.len(), 1);
        let ts: Vec<f64> = out.items[0].points.iter().map(|p| p.timestamp).collect();
        assert_eq!(ts, vec![1.0, 2.0, 3.0]);
        assert_eq!(out.dropped_rows, 0);
    }

    #[test]
    fn metrics_outside_window_omitted() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "m.csv",
            "timestamp,service,pod,metric_name,value\n100,a,podA,cpu,1\n5,a,podA,mem,1\n",
        );
        let out = load_metrics(&p, &TimeWindow::new(0.0, 50.0).unwrap(), &PodMapper::default()).unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].metric_name, "mem");
    }

    #[test]
    fn metrics_bad_value_counted() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "m.csv",
            "timestamp,service,pod,metric_name,value\n1,a,a-0,cpu,1\n2,a,a-0,cpu,2\n3,a,a-0,cpu,oops\n4,a,a-0,cpu,4\n5,a,a-0,cpu,5\n",
        );
        let out = load_metrics(&p, &wide(), &PodMapper::default()).unwrap();
        assert_eq!(out.items[0].points.len(), 4);
        assert_eq!(out.dropped_rows, 1);
    }

    #[test]
    fn metrics_bad_header_is_error() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "m.csv", "ts,service,pod,metric,value\n1,a,a-0,cpu,1\n");
        assert!(matches!(
            load_metrics(&p, &wide(), &PodMapper::default()),
            Err(TelemetryError::Header { .. })
        ));
        assert!(matches!(
            load_metrics(&d.path().join("missing.csv"), &wide(), &PodMapper::default()),
            Err(TelemetryError::Io { .. })
        ));
    }

    #[test]
    fn metrics_service_from_pod_when_blank() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "m.csv",
            "timestamp,service,pod,metric_name,value\n1,,adservice2-0,cpu,1\n",
        );
        let out = load_metrics(&p, &wide(), &PodMapper::default()).unwrap();
        assert_eq!(out.items[0].service.as_str(), "adservice");
    }

    #[test]
    fn logs_basic_and_blank() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "l.jsonl",
            concat!(
                r#"{"timestamp":1,"service":"a","pod":"a-0","message":"hello"}"#,
                "\n",
                r#"{"timestamp":"2","service":"a","pod":"a-0","message":"world"}"#,
                "\n",
                r#"{"timestamp":3,"service":"a","pod":"a-0","message":"   "}"#,
                "\n",
                "not json\n\n"
            ),
        );
        let out = load_logs(&p, &wide(), &PodMapper::default()).unwrap();
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.dropped_rows, 2);
    }

    #[test]
    fn logs_window_filter() {
        let d = tempfile::tempdir().unwrap();
        let lines: String = [5.0, 10.0, 15.0, 20.0, 25.0]
            .iter()
            .map(|t| format!("{{\"timestamp\":{t},\"service\":\"a\",\"pod\":\"a-0\",\"message\":\"m\"}}\n"))
            .collect();
        let p = write(&d, "l.jsonl", &lines);
        let out = load_logs(&p, &TimeWindow::new(10.0, 20.0).unwrap(), &PodMapper::default()).unwrap();
        assert_eq!(out.items.len(), 2);
    }

    const SPAN_HEAD: &str = "trace_id,span_id,parent_span_id,caller,callee,start,duration_ms,status\n";

    #[test]
    fn spans_root_and_negative() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "s.csv",
            &format!("{SPAN_HEAD}t1,s1,,,A,1,5,OK\nt1,s2,s1,,B,1,-3,OK\n"),
        );
        let out = load_spans(&p, &wide()).unwrap();
        assert_eq!(out.items.len(), 1);
        assert!(out.items[0].caller.is_none());
        assert_eq!(out.dropped_rows, 1);
    }

    #[test]
    fn spans_fixture_error_count() {
        let d = tempfile::tempdir().unwrap();
        let mut body = SPAN_HEAD.to_string();
        for i in 0..10 {
            let st = if i % 3 == 0 && i > 0 { "ERROR" } else { "OK" };
            body.push_str(&format!("t{i},s{i},,A,B,{i},10,{st}\n"));
        }
        let p = write(&d, "s.csv", &body);
        let out = load_spans(&p, &wide()).unwrap();
        assert_eq!(out.items.len(), 10);
        assert_eq!(out.items.iter().filter(|s| s.status == SpanStatus::Error).count(), 3);
    }

    fn span(trace: &str, id: &str, parent: Option<&str>, caller: Option<&str>, callee: &str) -> SpanRecord {
        SpanRecord {
            trace_id: trace.into(),
            span_id: id.into(),
            parent_span_id: parent.map(Into::into),
            caller: caller.map(ServiceId::from),
            callee: callee.into(),
            start: 0.0,
            duration_ms: 1.0,
            status: SpanStatus::Ok,
        }
    }

    #[test]
    fn dependency_dedup() {
        let spans = vec![
            span("t", "1", None, Some("A"), "B"),
            span("t", "2", None, Some("A"), "B"),
            span("t", "3", None, Some("B"), "C"),
        ];
        let g = dependency_from_spans(&spans);
        let e: Vec<_> = g.edges().iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        assert_eq!(e, vec![("A", "B"), ("B", "C")]);
    }

    #[test]
    fn dependency_single_root() {
        let g = dependency_from_spans(&[span("t", "1", None, None, "A")]);
        assert_eq!(g.nodes().len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn dependency_parent_resolution_and_dangling() {
        // Three traces; edges enumerated by hand from parent links:
        // t1: r(A) -> x(B) -> y(C)      => A→B, B→C
        // t2: r(A) -> x(D); z(B) parent missing => A→D, dangling=1
        // t3: r(C) -> x(C) self-loop, -> y(D) => C→D, self_loops=1
        let spans = vec![
            span("t1", "r", None, None, "A"),
            span("t1", "x", Some("r"), None, "B"),
            span("t1", "y", Some("x"), None, "C"),
            span("t2", "r", None, None, "A"),
            span("t2", "x", Some("r"), None, "D"),
            span("t2", "z", Some("gone"), None, "B"),
            span("t3", "r", None, None, "C"),
            span("t3", "x", Some("r"), None, "C"),
            span("t3", "y", Some("r"), None, "D"),
        ];
        let g = dependency_from_spans(&spans);
        let e: Vec<_> = g.edges().iter().map(|(a, b)| format!("{a}{b}")).collect();
        assert_eq!(e, vec!["AB", "AD", "BC", "CD"]);
        assert_eq!(g.dangling_parents, 1);
        assert_eq!(g.self_loops_dropped, 1);
    }

    #[test]
    fn topology_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let g = DependencyGraph::from_edges([("A", "B"), ("B", "C")]);
        let p = write(&d, "t.json", &g.to_topology_json().to_string());
        assert_eq!(DependencyGraph::load_topology(&p).unwrap(), g);
    }

    #[test]
    fn ingestion_idempotent() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            &d,
            "m.csv",
            "timestamp,service,pod,metric_name,value\n1,a,a-0,cpu,1\n2,a,a-0,cpu,2\n",
        );
        let a = load_metrics(&p, &wide(), &PodMapper::default()).unwrap();
        let b = load_metrics(&p, &wide(), &PodMapper::default()).unwrap();
        assert_eq!(a, b);
    }
}
