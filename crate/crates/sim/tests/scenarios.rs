use rootscope_core::alarm::scan_alarms;
use rootscope_core::config::TelemetryPaths;
use rootscope_core::detect::{FindingKind, FindingSource};
use rootscope_core::evidence::EvidenceSource;
use rootscope_core::oracle::Oracle;
use rootscope_core::pipeline::{load_telemetry, TelemetryMiner};
use rootscope_core::telemetry::ServiceId;
use rootscope_core::verdict::Granularity;
use rootscope_sim::scenario::{read_manifest, MANIFEST_FILE};
use rootscope_sim::*;

fn topo() -> SimTopology {
    generate_topology(&TopologyConfig::default()).unwrap()
}

fn deepest_with_callers(t: &SimTopology) -> ServiceId {
    let deepest = t.services.iter().map(|s| s.layer).max().unwrap();
    t.services
        .iter()
        .find(|s| s.layer == deepest && !t.callers(&s.id).is_empty())
        .unwrap()
        .id
        .clone()
}

fn fault(kind: FaultType, target: ServiceId) -> FaultSpec {
    FaultSpec {
        fault_type: kind,
        target,
        start_minute: 40,
        duration_minutes: 10,
        magnitude: kind.default_magnitude(),
    }
}

#[test]
fn cpu_fault_shows_on_target_and_its_callers() {
    let t = topo();
    let target = deepest_with_callers(&t);
    let cfg = ScenarioConfig::default();
    let s = generate_scenario(&t, &fault(FaultType::Cpu, target.clone()), &cfg, 3).unwrap();
    let settings = RunSettings::standard();
    let mut miner = TelemetryMiner::new(&s.telemetry, s.manifest.window, &settings.detector, &settings.kb);
    let mut oracle = Oracle::deterministic();

    let ev = miner.mine(&target, &mut oracle);
    assert!(ev
        .findings
        .iter()
        .any(|f| f.source == FindingSource::Metric && f.kind == FindingKind::Spike && f.subject == "cpu_usage"));

    // Callers slow down themselves: the spike sits on edges into them.
    let mut slowed = 0;
    for caller in t.callers(&target) {
        let ev = miner.mine(caller, &mut oracle);
        assert!(
            ev.findings.iter().any(|f| f.kind == FindingKind::ErrorLog),
            "{caller} has no error log"
        );
        if ev.findings.iter().any(|f| f.kind == FindingKind::LatencySpike) {
            slowed += 1;
        }
    }
    assert!(slowed > 0);
}

#[test]
fn propagated_services_are_transitive_callers() {
    let t = topo();
    let target = deepest_with_callers(&t);
    let s = generate_scenario(
        &t,
        &fault(FaultType::Memory, target.clone()),
        &ScenarioConfig::default(),
        5,
    )
    .unwrap();
    let hops = t.hops_to(&target);
    assert!(!s.propagated.is_empty());
    for svc in s.propagated.keys() {
        assert!(hops.get(svc).is_some_and(|&h| h > 0), "{svc}");
    }
    for log in s.telemetry.logs.iter().filter(|l| l.message.contains("error calling")) {
        assert!(s.propagated.contains_key(&log.service), "{}", log.service);
    }
}

#[test]
fn quiet_system_raises_no_alarm() {
    let t = topo();
    let cfg = ScenarioConfig::default();
    let rules = RunSettings::standard().detector.alarm;
    for seed in 0..5 {
        let tel = generate_quiet(&t, &cfg, seed).unwrap();
        let scan = scan_alarms(&tel.logs, &tel.metrics, &tel.spans, &cfg.window(), &rules);
        assert!(!scan.trigger, "seed {seed}: {:?}", scan.alarmed);
    }
}

#[test]
fn pod_pause_is_pod_granular() {
    let t = topo();
    let target = deepest_with_callers(&t);
    let s = generate_scenario(
        &t,
        &fault(FaultType::ProcessPause, target.clone()),
        &ScenarioConfig::default(),
        9,
    )
    .unwrap();
    let pod0 = t.service(&target).unwrap().pods[0].clone();
    assert_eq!(s.manifest.granularity, Granularity::Pod(pod0));
    let net = generate_scenario(
        &t,
        &fault(FaultType::NetworkLoss, target),
        &ScenarioConfig::default(),
        9,
    )
    .unwrap();
    assert_eq!(net.manifest.granularity, Granularity::Service);
}

#[test]
fn written_files_diagnose_like_the_in_memory_scenario() {
    let t = topo();
    let target = deepest_with_callers(&t);
    let s = generate_scenario(&t, &fault(FaultType::DiskIo, target), &ScenarioConfig::default(), 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    s.write_to(dir.path()).unwrap();

    let manifest = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest, s.manifest);

    let (tel, dep) = load_telemetry(&TelemetryPaths::in_dir(dir.path()), &manifest.window).unwrap();
    let loaded = Scenario {
        manifest,
        telemetry: tel,
        dependency: dep,
        propagated: Default::default(),
    };
    let settings = RunSettings::standard();
    let a = Outcome::from(&run_scenario(&s, &settings, Arm::Pipeline).unwrap());
    let b = Outcome::from(&run_scenario(&loaded, &settings, Arm::Pipeline).unwrap());
    assert_eq!(a.root_cause, b.root_cause);
    assert_eq!(a.fault_types, b.fault_types);
    assert_eq!(a.root_cause.as_ref(), Some(&s.manifest.target));
}

#[test]
fn single_alarmed_service_baseline_agrees_with_pipeline() {
    let t = generate_topology(&TopologyConfig {
        services: 1,
        ..TopologyConfig::default()
    })
    .unwrap();
    let only = t.services[0].id.clone();
    let s = generate_scenario(&t, &fault(FaultType::Cpu, only.clone()), &ScenarioConfig::default(), 2).unwrap();
    let settings = RunSettings::standard();
    let p = run_scenario(&s, &settings, Arm::Pipeline).unwrap();
    let b = run_scenario(&s, &settings, Arm::Baseline).unwrap();
    assert_eq!(p.report().unwrap().alarmed, vec![only.clone()]);
    let (p, b) = (Outcome::from(&p), Outcome::from(&b));
    assert_eq!(p.root_cause, Some(only));
    assert_eq!(p.root_cause, b.root_cause);
    assert_eq!(p.fault_types, b.fault_types);
}

#[test]
fn small_suite_metrics_are_consistent() {
    let plan = plan_suite(&SuiteConfig {
        scenarios: 12,
        ..SuiteConfig::default()
    })
    .unwrap();
    let rows = run_suite(&plan, &RunSettings::standard(), Arm::Pipeline, 2).unwrap();
    let (m, o): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let r = evaluate(&o, &m).unwrap();
    assert!(r.ft[0] <= r.ft[1] && r.ft[1] <= r.ft[2] && r.ft[2] <= r.fl1);
    assert!(r.fl1 >= 0.75, "{r}");
    assert!(r.mtc_chars > 0);
}

#[test]
fn suite_written_to_disk_is_reproducible() {
    let plan = plan_suite(&SuiteConfig {
        scenarios: 2,
        ..SuiteConfig::default()
    })
    .unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    plan.write_to(a.path()).unwrap();
    plan.write_to(b.path()).unwrap();
    for f in ["metrics.csv", "logs.jsonl", "spans.csv", "topology.json", MANIFEST_FILE] {
        let x = std::fs::read(a.path().join("case-000").join(f)).unwrap();
        let y = std::fs::read(b.path().join("case-000").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}
