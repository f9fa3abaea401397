//! Telemetry emission for one injected fault.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use rootscope_core::telemetry::{
    DependencyGraph, LogRecord, MetricSeries, Point, ServiceId, SpanRecord, SpanStatus, Telemetry, TimeWindow,
    METRICS_HEADER, SPANS_HEADER,
};
use rootscope_core::verdict::{Granularity, CPU_LABEL, DISK_LABEL, MEMORY_LABEL, NETWORK_LABEL, PAUSE_LABEL};

use crate::topology::{SimTopology, METRICS};
use crate::SimError;

pub const DEFAULT_T0: f64 = 1_699_999_200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FaultType {
    Cpu,
    Memory,
    NetworkDelay,
    NetworkLoss,
    DiskIo,
    ProcessPause,
}

impl FaultType {
    pub const ALL: [FaultType; 6] = [
        FaultType::Cpu,
        FaultType::Memory,
        FaultType::NetworkDelay,
        FaultType::NetworkLoss,
        FaultType::DiskIo,
        FaultType::ProcessPause,
    ];

    /// Taxonomy label a correct diagnosis should rank first.
    pub fn label(self) -> &'static str {
        match self {
            FaultType::Cpu => CPU_LABEL,
            FaultType::Memory => MEMORY_LABEL,
            FaultType::NetworkDelay | FaultType::NetworkLoss => NETWORK_LABEL,
            FaultType::DiskIo => DISK_LABEL,
            FaultType::ProcessPause => PAUSE_LABEL,
        }
    }

    /// Whether the fault hits a single pod rather than the whole service.
    pub fn pod_level(self) -> bool {
        !matches!(self, FaultType::NetworkDelay | FaultType::NetworkLoss)
    }

    /// Default intensity: a multiplier on the affected signal.
    pub fn default_magnitude(self) -> f64 {
        match self {
            FaultType::Cpu => 2.5,
            FaultType::Memory => 2.5,
            FaultType::NetworkDelay => 3.0,
            FaultType::NetworkLoss => 8.0,
            FaultType::DiskIo => 4.0,
            FaultType::ProcessPause => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub fault_type: FaultType,
    pub target: ServiceId,
    /// Minute offset of the first faulty sample.
    pub start_minute: usize,
    pub duration_minutes: usize,
    pub magnitude: f64,
}

/// How symptoms spread to the transitive callers of the target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    /// Intensity factor per caller hop.
    pub attenuation: f64,
    /// Symptom minutes at the first hop; later hops scale by `attenuation`.
    pub symptom_minutes: f64,
    pub error_lines_per_minute: usize,
    /// Relative latency inflation on the first hop's inbound calls.
    pub latency_gain: f64,
    /// Deepest hop whose inbound calls get slower.
    pub latency_hops: usize,
    /// When set, callers without callers of their own show this many
    /// minutes of error logs on every pod plus a request-rate dip.
    pub entry_boost_minutes: Option<usize>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            attenuation: 0.6,
            symptom_minutes: 2.0,
            error_lines_per_minute: 4,
            latency_gain: 1.0,
            latency_hops: 1,
            entry_boost_minutes: None,
        }
    }
}

impl PropagationConfig {
    /// Minutes of symptoms at caller hop `h` (1-based).
    pub fn minutes_at(&self, h: usize) -> usize {
        let m = self.symptom_minutes * self.attenuation.powi(h as i32 - 1);
        (m.round() as usize).max(1)
    }

    pub fn latency_factor_at(&self, h: usize) -> f64 {
        if h == 0 || h > self.latency_hops {
            return 1.0;
        }
        1.0 + self.latency_gain * self.attenuation.powi(h as i32 - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub t0: f64,
    pub horizon_minutes: usize,
    /// The diagnosis window covers minutes `[window_start_minute, horizon)`.
    pub window_start_minute: usize,
    /// Half-width of the relative uniform innovations on metrics.
    pub metric_noise: f64,
    /// Lag-one autocorrelation of metric noise and of per-edge load.
    pub noise_autocorrelation: f64,
    /// Half-width of the per-span relative latency jitter.
    pub latency_noise: f64,
    /// Half-width of the per-minute relative load drift on each edge.
    pub latency_drift: f64,
    pub spans_per_edge_minute: usize,
    pub logs_per_pod_minute: usize,
    pub propagation: PropagationConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            t0: DEFAULT_T0,
            horizon_minutes: 60,
            window_start_minute: 30,
            metric_noise: 0.05,
            noise_autocorrelation: 0.0,
            latency_noise: 0.25,
            latency_drift: 0.05,
            spans_per_edge_minute: 12,
            logs_per_pod_minute: 2,
            propagation: PropagationConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn window(&self) -> TimeWindow {
        TimeWindow::new(self.minute(self.window_start_minute), self.minute(self.horizon_minutes))
            .expect("window start precedes horizon")
    }

    fn minute(&self, m: usize) -> f64 {
        self.t0 + 60.0 * m as f64
    }

    fn validate(&self, fault: &FaultSpec) -> Result<(), SimError> {
        if self.window_start_minute == 0 || self.window_start_minute >= self.horizon_minutes {
            return Err(SimError::Config("window must start inside the horizon".into()));
        }
        if fault.duration_minutes == 0 {
            return Err(SimError::Config("fault duration must be positive".into()));
        }
        if fault.start_minute < self.window_start_minute
            || fault.start_minute + fault.duration_minutes > self.horizon_minutes
        {
            return Err(SimError::Config(format!(
                "fault minutes {}..{} fall outside the window",
                fault.start_minute,
                fault.start_minute + fault.duration_minutes
            )));
        }
        if self.spans_per_edge_minute == 0 {
            return Err(SimError::Config("spans_per_edge_minute must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub target: ServiceId,
    pub granularity: Granularity,
    pub fault_type: String,
    pub window: TimeWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection: Option<FaultSpec>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub manifest: Manifest,
    pub telemetry: Telemetry,
    pub dependency: DependencyGraph,
    /// Services that received propagated symptoms, with their hop count.
    pub propagated: BTreeMap<ServiceId, usize>,
}

const NORMAL_TEMPLATES: [&str; 4] = [
    "GET /api/items/{n} served in {n} ms",
    "cache refresh finished for shard {n}",
    "processed batch {n} with {n} records",
    "health probe ok after {n} ms",
];

fn fill(template: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(template.len() + 8);
    let mut rest = template;
    while let Some(i) = rest.find("{n}") {
        out.push_str(&rest[..i]);
        out.push_str(&rng.random_range(1..10_000u32).to_string());
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    out
}

fn fault_log(kind: FaultType) -> &'static str {
    match kind {
        FaultType::Cpu => "error: cpu throttled for {n} ms, cfs quota exceeded",
        FaultType::Memory => "java.lang.OutOfMemoryError: heap space exhausted in worker {n}",
        FaultType::NetworkDelay => "error: upstream request timeout after {n} ms",
        FaultType::NetworkLoss => "error: connection reset by peer, retransmit {n}",
        FaultType::DiskIo => "IOException: write to /data/segment-{n} failed, disk error",
        FaultType::ProcessPause => "",
    }
}

fn jitter(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..half_width)
    } else {
        0.0
    }
}

/// Stationary AR(1) noise with uniform innovations of half-width
/// `scale`, scaled so the marginal spread matches a single innovation.
struct Ar1 {
    phi: f64,
    scale: f64,
    state: Option<f64>,
}

impl Ar1 {
    fn new(phi: f64, scale: f64) -> Self {
        Self {
            phi: phi.clamp(0.0, 0.99),
            scale: scale.abs(),
            state: None,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let u = jitter(rng, self.scale);
        let x = match self.state {
            None => u,
            Some(prev) => self.phi * prev + (1.0 - self.phi * self.phi).sqrt() * u,
        };
        self.state = Some(x);
        x
    }
}

struct Emitter<'a> {
    topo: &'a SimTopology,
    cfg: &'a ScenarioConfig,
    fault: &'a FaultSpec,
    hops: BTreeMap<ServiceId, usize>,
    /// Callers of the target (and the target itself) are not entries.
    entries: Vec<ServiceId>,
    rng: ChaCha8Rng,
}

impl Emitter<'_> {
    fn faulty(&self, m: usize) -> bool {
        (self.fault.start_minute..self.fault.start_minute + self.fault.duration_minutes).contains(&m)
    }

    fn hop(&self, s: &ServiceId) -> Option<usize> {
        self.hops.get(s).copied()
    }

    /// Minutes during which a caller at hop `h` shows symptoms.
    fn symptomatic(&self, svc: &ServiceId, m: usize) -> bool {
        let Some(h) = self.hop(svc).filter(|&h| h > 0) else {
            return false;
        };
        let start = self.fault.start_minute;
        let span = match self.cfg.propagation.entry_boost_minutes {
            Some(b) if self.entries.contains(svc) => b,
            _ => self.cfg.propagation.minutes_at(h),
        };
        (start..start + span.min(self.fault.duration_minutes)).contains(&m)
    }

    fn boosted(&self, svc: &ServiceId) -> bool {
        self.cfg.propagation.entry_boost_minutes.is_some() && self.entries.contains(svc)
    }

    fn paused(&self, pod_index: usize, svc: &ServiceId, m: usize) -> bool {
        self.fault.fault_type == FaultType::ProcessPause
            && *svc == self.fault.target
            && pod_index == 0
            && self.faulty(m)
    }

    fn metrics(&mut self) -> Vec<MetricSeries> {
        let mut out = Vec::new();
        let f = self.fault;
        for svc in &self.topo.services {
            for (pi, pod) in svc.pods.iter().enumerate() {
                for name in METRICS {
                    let base = svc.profile[name] * (1.0 + self.rng.random_range(-0.1..0.1));
                    let mut points = Vec::with_capacity(self.cfg.horizon_minutes);
                    let mut drift = Ar1::new(self.cfg.noise_autocorrelation, self.cfg.metric_noise);
                    for m in 0..self.cfg.horizon_minutes {
                        let noise = 1.0 + drift.next(&mut self.rng);
                        if self.paused(pi, &svc.id, m) {
                            continue;
                        }
                        let mut v = base * noise;
                        if svc.id == f.target && self.faulty(m) {
                            let k = (m - f.start_minute) as f64;
                            let pod_hit = pi == 0 || !f.fault_type.pod_level();
                            v *= match (f.fault_type, name) {
                                (FaultType::Cpu, "cpu_usage") if pod_hit => f.magnitude,
                                (FaultType::Memory, "memory_usage") if pod_hit => {
                                    1.0 + (f.magnitude - 1.0) * (k + 1.0) / f.duration_minutes as f64
                                }
                                (FaultType::DiskIo, "disk_io_wait") if pod_hit => f.magnitude,
                                (FaultType::NetworkLoss, "network_packet_loss") => f.magnitude,
                                (FaultType::NetworkDelay, "network_receive_mb") => 1.0 / f.magnitude,
                                _ => 1.0,
                            };
                        }
                        if name == "request_rate" && self.boosted(&svc.id) && self.symptomatic(&svc.id, m) {
                            v *= 0.4;
                        }
                        points.push(Point {
                            timestamp: self.cfg.minute(m),
                            value: v,
                        });
                    }
                    out.push(MetricSeries {
                        service: svc.id.clone(),
                        pod: Some(pod.clone()),
                        metric_name: name.to_string(),
                        points,
                    });
                }
            }
        }
        out
    }

    /// First service on a shortest caller chain from `svc` toward the target.
    fn next_hop(&self, svc: &ServiceId) -> Option<&ServiceId> {
        let h = self.hop(svc).filter(|&h| h > 0)?;
        self.topo
            .edges
            .iter()
            .filter(|e| e.caller == *svc)
            .map(|e| &e.callee)
            .find(|c| self.hop(c) == Some(h - 1))
    }

    fn logs(&mut self) -> Vec<LogRecord> {
        let mut out = Vec::new();
        let f = self.fault;
        let lines = self.cfg.propagation.error_lines_per_minute.max(1);
        for svc in &self.topo.services {
            let callee = self.next_hop(&svc.id).cloned();
            for (pi, pod) in svc.pods.iter().enumerate() {
                for m in 0..self.cfg.horizon_minutes {
                    if self.paused(pi, &svc.id, m) {
                        continue;
                    }
                    let start = self.cfg.minute(m);
                    let n = self.cfg.logs_per_pod_minute;
                    for j in 0..n {
                        let tpl = NORMAL_TEMPLATES[self.rng.random_range(0..NORMAL_TEMPLATES.len())];
                        let message = fill(tpl, &mut self.rng);
                        out.push(LogRecord {
                            timestamp: start + (j as f64 + 0.5) * 60.0 / n as f64,
                            service: svc.id.clone(),
                            pod: pod.clone(),
                            message,
                        });
                    }
                    let burst = |message: &str, rng: &mut ChaCha8Rng, out: &mut Vec<LogRecord>| {
                        for j in 0..lines {
                            out.push(LogRecord {
                                timestamp: start + (j as f64 + 0.25) * 60.0 / lines as f64,
                                service: svc.id.clone(),
                                pod: pod.clone(),
                                message: fill(message, rng),
                            });
                        }
                    };
                    if svc.id == f.target && self.faulty(m) && f.fault_type != FaultType::ProcessPause {
                        if pi == 0 || !f.fault_type.pod_level() {
                            burst(fault_log(f.fault_type), &mut self.rng, &mut out);
                        }
                    } else if let Some(c) = &callee {
                        let on_pod = pi == 0 || self.boosted(&svc.id);
                        if on_pod && self.symptomatic(&svc.id, m) {
                            let msg = format!("error calling {c}: upstream returned status 503 after {{n}} ms");
                            burst(&msg, &mut self.rng, &mut out);
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        out
    }

    fn spans(&mut self) -> Vec<SpanRecord> {
        let mut out = Vec::new();
        let f = self.fault;
        let per = self.cfg.spans_per_edge_minute;
        for (ei, e) in self.topo.edges.iter().enumerate() {
            let callee_pods = self.topo.service(&e.callee).map_or(1, |s| s.pods.len());
            let mut load = Ar1::new(self.cfg.noise_autocorrelation, self.cfg.latency_drift);
            for m in 0..self.cfg.horizon_minutes {
                let mut factor = 1.0 + load.next(&mut self.rng);
                if e.callee == f.target && f.fault_type == FaultType::NetworkDelay && self.faulty(m) {
                    factor *= f.magnitude;
                } else if self.symptomatic(&e.callee, m) {
                    factor *= self.cfg.propagation.latency_factor_at(self.hop(&e.callee).unwrap_or(0));
                }
                for k in 0..per {
                    let noise = 1.0 + jitter(&mut self.rng, self.cfg.latency_noise);
                    let pod_index = k % callee_pods;
                    let failed = self.paused(pod_index, &e.callee, m);
                    out.push(SpanRecord {
                        trace_id: format!("t{ei}-{m}-{k}"),
                        span_id: "s1".into(),
                        parent_span_id: None,
                        caller: Some(e.caller.clone()),
                        callee: e.callee.clone(),
                        start: self.cfg.minute(m) + (k as f64 + 0.5) * 60.0 / per as f64,
                        duration_ms: e.base_latency_ms * noise * factor,
                        status: if failed { SpanStatus::Error } else { SpanStatus::Ok },
                    });
                }
            }
        }
        out.sort_by(|a, b| a.start.total_cmp(&b.start));
        out
    }
}

/// Emits the telemetry of one fault on `topo`.
pub fn generate_scenario(
    topo: &SimTopology,
    fault: &FaultSpec,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<Scenario, SimError> {
    cfg.validate(fault)?;
    let Some(target) = topo.service(&fault.target) else {
        return Err(SimError::UnknownTarget(fault.target.clone()));
    };
    if fault.fault_type == FaultType::ProcessPause && topo.callers(&target.id).is_empty() {
        return Err(SimError::Config(format!(
            "{} has no callers to observe a pause",
            target.id
        )));
    }
    let hops = topo.hops_to(&fault.target);
    let entries = hops
        .keys()
        .filter(|s| **s != fault.target && topo.callers(s).is_empty())
        .cloned()
        .collect();
    let mut em = Emitter {
        topo,
        cfg,
        fault,
        hops,
        entries,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let metrics = em.metrics();
    let logs = em.logs();
    let spans = em.spans();
    let granularity = if fault.fault_type.pod_level() {
        Granularity::Pod(target.pods[0].clone())
    } else {
        Granularity::Service
    };
    let propagated = em
        .hops
        .iter()
        .filter(|(_, &h)| h > 0)
        .map(|(s, &h)| (s.clone(), h))
        .collect();
    Ok(Scenario {
        manifest: Manifest {
            target: fault.target.clone(),
            granularity,
            fault_type: fault.fault_type.label().to_string(),
            window: cfg.window(),
            injection: Some(fault.clone()),
        },
        telemetry: Telemetry {
            metrics,
            logs,
            spans,
            ..Telemetry::default()
        },
        dependency: topo.dependency_graph(),
        propagated,
    })
}

/// Fault-free telemetry on `topo`: the same traffic, noise and logs as a
/// scenario, with nothing injected and nothing propagated.
pub fn generate_quiet(topo: &SimTopology, cfg: &ScenarioConfig, seed: u64) -> Result<Telemetry, SimError> {
    let Some(first) = topo.services.first() else {
        return Err(SimError::Config("topology has no services".into()));
    };
    let idle = FaultSpec {
        fault_type: FaultType::Cpu,
        target: first.id.clone(),
        start_minute: cfg.window_start_minute,
        duration_minutes: 1,
        magnitude: 1.0,
    };
    cfg.validate(&idle)?;
    let idle = FaultSpec {
        duration_minutes: 0,
        ..idle
    };
    let mut em = Emitter {
        topo,
        cfg,
        fault: &idle,
        hops: BTreeMap::new(),
        entries: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    Ok(Telemetry {
        metrics: em.metrics(),
        logs: em.logs(),
        spans: em.spans(),
        ..Telemetry::default()
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |e| SimError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    timestamp: f64,
    service: &'a str,
    pod: &'a str,
    message: &'a str,
}

impl Scenario {
    /// Writes metrics.csv, logs.jsonl, spans.csv, topology.json and
    /// manifest.json into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let p = dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&p).map_err(csv_err(&p))?;
        w.write_record(METRICS_HEADER).map_err(csv_err(&p))?;
        for s in &self.telemetry.metrics {
            let pod = s.pod.as_ref().map_or("", |p| p.as_str());
            for pt in &s.points {
                w.write_record([
                    pt.timestamp.to_string().as_str(),
                    s.service.as_str(),
                    pod,
                    &s.metric_name,
                    &pt.value.to_string(),
                ])
                .map_err(csv_err(&p))?;
            }
        }
        w.flush().map_err(io_err(&p))?;

        let p = dir.join("logs.jsonl");
        let mut w = BufWriter::new(File::create(&p).map_err(io_err(&p))?);
        for l in &self.telemetry.logs {
            let line = LogLine {
                timestamp: l.timestamp,
                service: l.service.as_str(),
                pod: l.pod.as_str(),
                message: &l.message,
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| SimError::Json(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err(&p))?;
        }
        w.flush().map_err(io_err(&p))?;

        let p = dir.join("spans.csv");
        let mut w = csv::Writer::from_path(&p).map_err(csv_err(&p))?;
        w.write_record(SPANS_HEADER).map_err(csv_err(&p))?;
        for s in &self.telemetry.spans {
            w.write_record([
                s.trace_id.as_str(),
                &s.span_id,
                s.parent_span_id.as_deref().unwrap_or(""),
                s.caller.as_ref().map_or("", |c| c.as_str()),
                s.callee.as_str(),
                &s.start.to_string(),
                &s.duration_ms.to_string(),
                if s.status == SpanStatus::Ok { "OK" } else { "ERROR" },
            ])
            .map_err(csv_err(&p))?;
        }
        w.flush().map_err(io_err(&p))?;

        write_json(&dir.join("topology.json"), &self.dependency.to_topology_json())?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), SimError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SimError::Json(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest, SimError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| SimError::Json(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_topology, TopologyConfig};
    use rootscope_core::telemetry::PodId;

    fn topo() -> SimTopology {
        generate_topology(&TopologyConfig::default()).unwrap()
    }

    fn spec(kind: FaultType, target: &ServiceId) -> FaultSpec {
        FaultSpec {
            fault_type: kind,
            target: target.clone(),
            start_minute: 40,
            duration_minutes: 10,
            magnitude: kind.default_magnitude(),
        }
    }

    #[test]
    fn minutes_attenuate_per_hop() {
        let p = PropagationConfig::default();
        assert_eq!([p.minutes_at(1), p.minutes_at(2), p.minutes_at(3)], [2, 1, 1]);
        let long = PropagationConfig {
            symptom_minutes: 5.0,
            ..p.clone()
        };
        assert_eq!(
            [
                long.minutes_at(1),
                long.minutes_at(2),
                long.minutes_at(3),
                long.minutes_at(6)
            ],
            [5, 3, 2, 1]
        );
        assert_eq!(p.latency_factor_at(1), 2.0);
        assert_eq!(p.latency_factor_at(2), 1.0);
    }

    #[test]
    fn normal_logs_carry_no_keywords() {
        let t = topo();
        let target = t.services.last().unwrap().id.clone();
        let s = generate_scenario(&t, &spec(FaultType::Cpu, &target), &ScenarioConfig::default(), 1).unwrap();
        let keywords = rootscope_core::logmine::DEFAULT_KEYWORDS;
        for l in &s.telemetry.logs {
            let lower = l.message.to_lowercase();
            let hot = keywords.iter().any(|k| lower.contains(k));
            let symptomatic = l.service == target || s.propagated.contains_key(&l.service);
            assert!(!hot || symptomatic, "{l:?}");
        }
    }

    #[test]
    fn pause_silences_pod_and_fails_calls() {
        let t = topo();
        let target = t.services.last().unwrap().id.clone();
        let s = generate_scenario(
            &t,
            &spec(FaultType::ProcessPause, &target),
            &ScenarioConfig::default(),
            1,
        )
        .unwrap();
        let pod0 = PodId::new(format!("{target}-0"));
        let fault = DEFAULT_T0 + 40.0 * 60.0..DEFAULT_T0 + 50.0 * 60.0;
        for m in s.telemetry.metrics.iter().filter(|m| m.pod.as_ref() == Some(&pod0)) {
            assert!(m.points.iter().all(|p| !fault.contains(&p.timestamp)));
        }
        let errors = s
            .telemetry
            .spans
            .iter()
            .filter(|sp| sp.status == SpanStatus::Error)
            .collect::<Vec<_>>();
        assert!(!errors.is_empty());
        assert!(errors.iter().all(|sp| sp.callee == target && fault.contains(&sp.start)));
        assert_eq!(s.manifest.granularity, Granularity::Pod(pod0));
    }

    #[test]
    fn rejects_unknown_target_and_bad_window() {
        let t = topo();
        let missing = spec(FaultType::Cpu, &"nope".into());
        assert!(matches!(
            generate_scenario(&t, &missing, &ScenarioConfig::default(), 1),
            Err(SimError::UnknownTarget(_))
        ));
        let mut early = spec(FaultType::Cpu, &t.services[3].id);
        early.start_minute = 10;
        assert!(generate_scenario(&t, &early, &ScenarioConfig::default(), 1).is_err());
        let gateway = spec(FaultType::ProcessPause, &t.services[0].id);
        assert!(generate_scenario(&t, &gateway, &ScenarioConfig::default(), 1).is_err());
    }

    #[test]
    fn propagation_only_reaches_callers() {
        let t = topo();
        let target = t.services.last().unwrap().id.clone();
        let s = generate_scenario(&t, &spec(FaultType::DiskIo, &target), &ScenarioConfig::default(), 3).unwrap();
        let callers = rootscope_core::graph::ancestors(&t.dependency_graph(), &[target.clone()].into());
        for svc in s.propagated.keys() {
            assert!(callers.contains(svc), "{svc} is not a caller of {target}");
        }
    }

    #[test]
    fn emission_is_seed_reproducible() {
        let t = topo();
        let f = spec(FaultType::Memory, &t.services[20].id);
        let a = generate_scenario(&t, &f, &ScenarioConfig::default(), 9).unwrap();
        let b = generate_scenario(&t, &f, &ScenarioConfig::default(), 9).unwrap();
        assert_eq!(a.telemetry.metrics, b.telemetry.metrics);
        assert_eq!(a.telemetry.logs, b.telemetry.logs);
        assert_eq!(a.telemetry.spans, b.telemetry.spans);
    }
}
