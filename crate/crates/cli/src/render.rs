//! Markdown rendering of a diagnosis for on-call review.

use std::fmt::Write as _;

use rootscope_core::mcts::{DiagnosisReport, TraceStep};
use rootscope_core::oracle::prompts::finding_line;
use rootscope_core::verdict::Granularity;

fn join<T: ToString>(items: &[T], sep: &str) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(sep)
}

pub fn report_markdown(r: &DiagnosisReport) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Diagnosis {}\n", r.report_id);
    if let Some(w) = &r.window {
        let _ = writeln!(md, "Window: {} .. {}\n", w.start, w.end);
    }

    let _ = writeln!(md, "## Verdict\n");
    let root = r
        .root_cause_service
        .as_ref()
        .map_or("(none)".to_string(), ToString::to_string);
    let _ = writeln!(md, "- root cause service: **{root}**");
    match &r.granularity {
        Some(Granularity::Pod(p)) => {
            let _ = writeln!(md, "- granularity: pod `{p}`");
        }
        Some(Granularity::Service) => {
            let _ = writeln!(md, "- granularity: whole service");
        }
        None => {}
    }
    let _ = writeln!(md, "- fault path: {}", join(&r.fault_path, " → "));
    if let Some(k) = &r.kb_case {
        let _ = writeln!(
            md,
            "- matched stored case `{}` (similarity {:.3}): {} on {}",
            k.case_id, k.score, k.fault_type, k.root_cause_service
        );
        if !k.solution.is_empty() {
            let _ = writeln!(md, "- recorded fix: {}", k.solution);
        }
    }
    let _ = writeln!(md, "\n| rank | fault type | matching findings | why |");
    let _ = writeln!(md, "|---|---|---|---|");
    for (i, e) in r.fault_types.entries.iter().enumerate() {
        let _ = writeln!(md, "| {} | {} | {} | {} |", i + 1, e.label, e.count, e.rationale);
    }

    let _ = writeln!(md, "\n## Alarmed services\n\n{}", join(&r.alarmed, ", "));

    let _ = writeln!(md, "\n## Search trace\n");
    if r.trace.is_empty() {
        let _ = writeln!(md, "No search steps were recorded.");
    }
    for step in &r.trace {
        push_step(&mut md, step);
    }

    let _ = writeln!(md, "## Evidence\n");
    for (svc, ev) in &r.evidence {
        let _ = writeln!(md, "### {svc}\n");
        if !ev.log_summary.trim().is_empty() {
            for line in ev.log_summary.lines().filter(|l| !l.trim().is_empty()) {
                let _ = writeln!(md, "> {line}");
            }
            md.push('\n');
        }
        if ev.findings.is_empty() {
            let _ = writeln!(md, "No findings.");
        } else {
            let _ = writeln!(md, "```");
            for f in &ev.findings {
                let _ = writeln!(md, "{}", finding_line(f));
            }
            let _ = writeln!(md, "```");
        }
        if !ev.silent_pods.is_empty() {
            let _ = writeln!(
                md,
                "\nSilent pods: {}",
                join(&ev.silent_pods.iter().collect::<Vec<_>>(), ", ")
            );
        }
        for f in &ev.flags {
            let _ = writeln!(md, "\n_{f}_");
        }
        md.push('\n');
    }

    let s = &r.stats;
    let _ = writeln!(md, "## Cost\n");
    let _ = writeln!(md, "- oracle calls: {}", s.oracle_calls);
    let _ = writeln!(md, "- largest oracle input: {} chars", s.max_input_chars);
    let _ = writeln!(md, "- total oracle input: {} chars", s.total_input_chars);
    let _ = writeln!(md, "- search iterations: {}", s.iterations_used);
    let _ = writeln!(md, "- wall time: {:.1} ms", s.elapsed_ms);
    if let Some(i) = &r.ingestion {
        let _ = writeln!(
            md,
            "- ingested: {} metric series, {} log records, {} spans ({} / {} / {} rows dropped)",
            i.metric_series, i.log_records, i.spans, i.dropped_metric_rows, i.dropped_log_rows, i.dropped_span_rows
        );
    }
    if !r.flags.is_empty() {
        let _ = writeln!(md, "\n## Flags\n");
        for f in &r.flags {
            let _ = writeln!(md, "- {f}");
        }
    }
    md
}

fn push_step(md: &mut String, step: &TraceStep) {
    let _ = writeln!(
        md,
        "### Iteration {}: {}\n",
        step.iteration,
        if step.selected_path.is_empty() {
            "(entry)".to_string()
        } else {
            join(&step.selected_path, " → ")
        }
    );
    if let Some(x) = &step.expansion {
        let _ = writeln!(md, "Verifier scores (best: {}):\n", x.best);
        let _ = writeln!(md, "| service | raw | score | note |");
        let _ = writeln!(md, "|---|---|---|---|");
        for (svc, score) in &x.scores {
            let raw = x.raw.get(svc).map_or(String::new(), |v| format!("{v:.2}"));
            let note = x.rationale.get(svc).map_or("", String::as_str);
            let _ = writeln!(md, "| {svc} | {raw} | {score} | {note} |");
        }
        for f in &x.flags {
            let _ = writeln!(md, "\n_{f}_");
        }
        md.push('\n');
    }
    if let Some(k) = &step.kb {
        let verdict = if k.matched { "match" } else { "no match" };
        let _ = write!(md, "Knowledge base: {verdict}");
        if let (Some(c), Some(s)) = (&k.best_case, k.score) {
            let _ = write!(md, ", best case `{c}` at {s:.3}");
        }
        if !k.candidates.is_empty() {
            let _ = write!(md, " (candidates: {})", k.candidates.join(", "));
        }
        md.push('\n');
        if let Some(f) = &k.flag {
            let _ = writeln!(md, "_{f}_");
        }
        md.push('\n');
    }
    if let Some(s) = &step.simulation {
        let callers = if s.caller_counts.is_empty() {
            "no callers".to_string()
        } else {
            let counts = s
                .caller_counts
                .iter()
                .map(|(c, n)| format!("{c}={n}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("callers {counts}")
        };
        let _ = writeln!(
            md,
            "Simulate {}: own anomalies {}, {}, S = {}, R = {:.2}",
            step.simulated, s.own, callers, s.s, s.r
        );
        for f in &s.flags {
            let _ = writeln!(md, "_{f}_");
        }
    } else {
        let _ = writeln!(md, "Simulate {}: R = {:.2}", step.simulated, step.reward);
    }
    md.push('\n');
}
