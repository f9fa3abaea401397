//! Fast alarm scan deciding whether root-cause analysis starts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::telemetry::{LogRecord, MetricSeries, ServiceId, SpanRecord, SpanStatus, TimeWindow};
use crate::verdict::glob_match;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBound {
    /// Glob over metric names.
    pub metric: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlarmRules {
    pub log_keywords: Vec<String>,
    pub log_count: usize,
    pub log_window_secs: f64,
    pub error_span_count: usize,
    pub error_span_window_secs: f64,
    pub metric_bounds: Vec<MetricBound>,
}

impl Default for AlarmRules {
    fn default() -> Self {
        Self {
            log_keywords: vec!["error".into(), "exception".into()],
            log_count: 3,
            log_window_secs: 60.0,
            error_span_count: 3,
            error_span_window_secs: 60.0,
            metric_bounds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmScan {
    pub window: TimeWindow,
    pub alarmed: BTreeSet<ServiceId>,
    pub per_service_alarm_count: BTreeMap<ServiceId, usize>,
    pub trigger: bool,
}

/// True when some `count` consecutive sorted timestamps span less than
/// `width` seconds.
fn dense(times: &mut [f64], count: usize, width: f64) -> bool {
    if count == 0 {
        return true;
    }
    if times.len() < count {
        return false;
    }
    times.sort_by(f64::total_cmp);
    times.windows(count).any(|w| w[count - 1] - w[0] < width)
}

/// Counts one alarm per pod with a dense run of keyword log lines, per
/// metric series breaching a static bound, and per service receiving a
/// dense run of failed calls.
pub fn scan_alarms(
    logs: &[LogRecord],
    metrics: &[MetricSeries],
    spans: &[SpanRecord],
    window: &TimeWindow,
    rules: &AlarmRules,
) -> AlarmScan {
    let keywords: Vec<String> = rules.log_keywords.iter().map(|k| k.to_lowercase()).collect();
    let mut counts: BTreeMap<ServiceId, usize> = BTreeMap::new();

    let mut log_times: BTreeMap<(&ServiceId, &str), Vec<f64>> = BTreeMap::new();
    for r in logs.iter().filter(|r| window.contains(r.timestamp)) {
        let msg = r.message.to_lowercase();
        if keywords.iter().any(|k| msg.contains(k.as_str())) {
            log_times
                .entry((&r.service, r.pod.as_str()))
                .or_default()
                .push(r.timestamp);
        }
    }
    for ((svc, _), mut times) in log_times {
        if dense(&mut times, rules.log_count, rules.log_window_secs) {
            *counts.entry(svc.clone()).or_default() += 1;
        }
    }

    for s in metrics {
        let Some(bound) = rules
            .metric_bounds
            .iter()
            .find(|b| glob_match(&b.metric, &s.metric_name))
        else {
            continue;
        };
        let breach = s
            .points
            .iter()
            .filter(|p| window.contains(p.timestamp))
            .any(|p| bound.min.is_some_and(|m| p.value < m) || bound.max.is_some_and(|m| p.value > m));
        if breach {
            *counts.entry(s.service.clone()).or_default() += 1;
        }
    }

    let mut span_times: BTreeMap<&ServiceId, Vec<f64>> = BTreeMap::new();
    for s in spans
        .iter()
        .filter(|s| s.status == SpanStatus::Error && window.contains(s.start))
    {
        span_times.entry(&s.callee).or_default().push(s.start);
    }
    for (svc, mut times) in span_times {
        if dense(&mut times, rules.error_span_count, rules.error_span_window_secs) {
            *counts.entry(svc.clone()).or_default() += 1;
        }
    }

    let alarmed: BTreeSet<ServiceId> = counts.keys().cloned().collect();
    AlarmScan {
        window: *window,
        trigger: !alarmed.is_empty(),
        alarmed,
        per_service_alarm_count: counts,
    }
}
