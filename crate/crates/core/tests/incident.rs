//! A hand-written three-service incident read from disk, diagnosed with both
//! oracle modes, then stored in and recalled from the knowledge base.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rootscope_core::config::{DetectorConfig, TelemetryPaths};
use rootscope_core::kb::KnowledgeBase;
use rootscope_core::mcts::MctsConfig;
use rootscope_core::oracle::{deterministic_response, ChatMessage, ExternalConfig, Oracle, OracleMode};
use rootscope_core::pipeline::{diagnose, load_telemetry, DiagnoseOptions, Diagnosis};
use rootscope_core::telemetry::{ServiceId, TimeWindow};

const FAULT_MINUTES: std::ops::Range<u32> = 40..46;

fn window() -> TimeWindow {
    TimeWindow::new(1800.0, 3600.0).unwrap()
}

/// gateway -> api -> db, one pod each; db leaks memory for six minutes and
/// it and both callers log errors while it does.
fn write_incident(dir: &Path) {
    let mut metrics = String::from("timestamp,service,pod,metric_name,value\n");
    let mut logs = String::new();
    let mut spans = String::from("trace_id,span_id,parent_span_id,caller,callee,start,duration_ms,status\n");
    for minute in 0..60u32 {
        let t = f64::from(minute) * 60.0;
        let wobble = f64::from((minute * 7919) % 13) / 13.0;
        let faulty = FAULT_MINUTES.contains(&minute);
        for svc in ["gateway", "api", "db"] {
            let mem = if svc == "db" && faulty {
                900.0
            } else {
                300.0 + 4.0 * wobble
            };
            let _ = writeln!(metrics, "{t},{svc},{svc}-0,cpu_usage,{}", 20.0 + wobble);
            let _ = writeln!(metrics, "{t},{svc},{svc}-0,memory_usage,{mem}");
            let _ = writeln!(
                logs,
                r#"{{"timestamp":{},"service":"{svc}","pod":"{svc}-0","message":"request {} served"}}"#,
                t + 5.0,
                minute * 31
            );
        }
        if faulty {
            for k in 0..3 {
                let at = t + 20.0 + 10.0 * f64::from(k);
                for (svc, callee) in [("gateway", "api"), ("api", "db")] {
                    let _ = writeln!(
                        logs,
                        r#"{{"timestamp":{at},"service":"{svc}","pod":"{svc}-0","message":"error calling {callee}: timeout after 3000 ms"}}"#
                    );
                }
                let _ = writeln!(
                    logs,
                    r#"{{"timestamp":{at},"service":"db","pod":"db-0","message":"OutOfMemory exception in buffer pool"}}"#
                );
            }
        }
        for (k, (caller, callee)) in [("gateway", "api"), ("api", "db")].into_iter().enumerate() {
            let _ = writeln!(
                spans,
                "t{minute}-{k},s{k},,{caller},{callee},{},{},OK",
                t + 1.0,
                12.0 + wobble
            );
        }
    }
    metrics.push_str("not-a-time,db,db-0,cpu_usage,1\n");
    fs::write(dir.join("metrics.csv"), metrics).unwrap();
    fs::write(dir.join("logs.jsonl"), logs).unwrap();
    fs::write(dir.join("spans.csv"), spans).unwrap();
}

fn run(dir: &Path, kb: &KnowledgeBase, oracle: &mut Oracle) -> Diagnosis {
    let (telemetry, dep) = load_telemetry(&TelemetryPaths::in_dir(dir), &window()).unwrap();
    assert_eq!(telemetry.dropped_metric_rows, 1);
    let detector = DetectorConfig::default();
    let opts = DiagnoseOptions {
        detector: &detector,
        kb,
        mcts: &MctsConfig::default(),
        top_k: 5,
        tau: 0.8,
    };
    diagnose(&telemetry, &dep, window(), &opts, oracle).unwrap()
}

/// Serves chat completions by answering with the rule engine, so the
/// external path can be checked against the deterministic one.
fn stub_endpoint(requests: Arc<AtomicUsize>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let (mut len, mut authorized) = (0usize, false);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                authorized |= lower.starts_with("x-api-key: secret");
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            requests.fetch_add(1, Ordering::SeqCst);
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
            let messages: Vec<ChatMessage> = serde_json::from_value(req["messages"].clone()).unwrap();
            let (status, reply) = match deterministic_response(&messages) {
                Ok(text) if authorized => (
                    "200 OK",
                    serde_json::json!({"choices": [{"message": {"content": text}}]}),
                ),
                _ => ("400 Bad Request", serde_json::json!({"error": "rejected"})),
            };
            let reply = reply.to_string();
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

#[test]
fn memory_leak_in_the_deepest_service_is_found() {
    let dir = tempfile::tempdir().unwrap();
    write_incident(dir.path());
    let d = run(dir.path(), &KnowledgeBase::default(), &mut Oracle::deterministic());
    let r = d.report().expect("alarms fire");
    let names = |v: &[ServiceId]| v.iter().map(ToString::to_string).collect::<Vec<_>>();
    assert_eq!(names(&r.alarmed), ["api", "db", "gateway"]);
    assert_eq!(names(&r.fault_path), ["gateway", "api", "db"]);
    assert_eq!(r.root_cause_service, Some("db".into()));
    assert_eq!(r.fault_types.top(), "Memory problem");
    assert!(r.stats.oracle_calls > 0 && r.stats.max_input_chars > 0);
}

#[test]
fn external_endpoint_reaches_the_same_verdict() {
    let dir = tempfile::tempdir().unwrap();
    write_incident(dir.path());
    let local = run(dir.path(), &KnowledgeBase::default(), &mut Oracle::deterministic());

    let requests = Arc::new(AtomicUsize::new(0));
    let mut oracle = Oracle::new(OracleMode::External(ExternalConfig {
        endpoint: stub_endpoint(requests.clone()),
        timeout_secs: 10.0,
        key_header: Some("x-api-key".into()),
        key: Some("secret".into()),
        retries: 0,
        ..ExternalConfig::default()
    }))
    .unwrap();
    let remote = run(dir.path(), &KnowledgeBase::default(), &mut oracle);

    let (a, b) = (local.report().unwrap(), remote.report().unwrap());
    assert_eq!(a.root_cause_service, b.root_cause_service);
    assert_eq!(a.fault_path, b.fault_path);
    assert_eq!(a.fault_types.top(), b.fault_types.top());
    assert_eq!(requests.load(Ordering::SeqCst), b.stats.oracle_calls);
    assert_eq!(a.stats.oracle_calls, b.stats.oracle_calls);
}

#[test]
fn stored_case_is_recalled_after_a_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_incident(dir.path());
    let first = run(dir.path(), &KnowledgeBase::default(), &mut Oracle::deterministic());

    let path = dir.path().join("kb.json");
    let mut kb = KnowledgeBase::load_or_default(&path).unwrap();
    let id = kb
        .add_case(first.report().unwrap(), true, "restart db with a lower cache size")
        .unwrap();
    kb.save(&path).unwrap();

    let kb = KnowledgeBase::load(&path).unwrap();
    let again = run(dir.path(), &kb, &mut Oracle::deterministic());
    let r = again.report().unwrap();
    let hit = r.kb_case.as_ref().expect("case matched");
    assert_eq!(hit.case_id, id);
    assert_eq!(hit.solution, "restart db with a lower cache size");
    assert_eq!(r.root_cause_service, Some("db".into()));
    assert!(r.stats.iterations_used <= 1);
}
