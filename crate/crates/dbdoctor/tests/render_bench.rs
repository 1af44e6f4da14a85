use dbdoctor::bench::{load_scenarios, render_table, run_bench, run_cell, BenchSettings};
use dbdoctor::config::AppConfig;
use dbdoctor::render::{render_report, ReportFormat};
use dbdoctor::runner::SessionMode;
use dbdoctor_core::diagnosis::{SearchStats, Termination};
use dbdoctor_core::observability::AnomalyClass;
use dbdoctor_core::{AnomalyAlert, DiagnosisReport, RootCause};
use std::path::PathBuf;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn report(causes: Vec<RootCause>) -> DiagnosisReport {
    DiagnosisReport {
        alert: AnomalyAlert {
            alert_id: "a1".into(),
            start_time: 10,
            end_time: 20,
            description: "Slow checkout.".into(),
            anomaly_class: AnomalyClass::RunningSlow,
        },
        bullet_summary: dbdoctor_core::diagnosis::bullet_summary(&causes),
        causes,
        analysis: "Two things went wrong.".into(),
        transcript: vec![],
        notes: vec!["Verdict: A accepted by the user.".into()],
        stats: SearchStats {
            simulations: 3,
            nodes: 3,
            termination: Termination::Concluded,
        },
    }
}

fn cause(id: &str, solutions: &[&str]) -> RootCause {
    RootCause {
        cause_id: id.into(),
        evidence: format!("{id} evidence"),
        evidence_nodes: vec!["Diagnoser#1".into()],
        matched_experience: None,
        solutions: solutions.iter().map(|s| s.to_string()).collect(),
        reported_by: None,
    }
}

fn causes_section(md: &str) -> Vec<&str> {
    md.split("## Root causes")
        .nth(1)
        .unwrap()
        .split("\n## ")
        .next()
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .collect()
}

#[test]
fn markdown_has_one_bullet_per_cause() {
    let r = report(vec![cause("A", &["fix a"]), cause("B", &["fix b", "or this"])]);
    let md = render_report(&r, ReportFormat::Markdown);
    let lines = causes_section(&md);
    assert_eq!(lines.iter().filter(|l| l.starts_with("- ")).count(), 2);
    assert_eq!(lines.iter().filter(|l| l.starts_with("  - ")).count(), 3);
    assert!(md.contains("## Notes\n\n- Verdict: A accepted by the user."));
}

#[test]
fn empty_report_says_nothing_was_found() {
    let md = render_report(&report(vec![]), ReportFormat::Markdown);
    assert_eq!(causes_section(&md), vec!["- No root cause identified."]);
}

#[test]
fn json_round_trips() {
    let r = report(vec![cause("A", &["fix a"])]);
    let text = render_report(&r, ReportFormat::Json);
    let back: DiagnosisReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
}

#[test]
fn empty_scenario_list_scores_zero() {
    let cfg = AppConfig::load(&data_dir().join("dbdoctor.json")).unwrap();
    let res = cfg.resources().unwrap();
    let out = run_bench(&res, &[], &[SessionMode::Single, SessionMode::BaselineMetricsOnly], &BenchSettings::default());
    assert_eq!(out.legality_count[&SessionMode::Single], 0);
    assert_eq!(out.accuracy_count[&SessionMode::BaselineMetricsOnly], 0);
    assert!(render_table(&out).contains("single: legality 0/0, accuracy 0/0"));
}

#[test]
fn missing_fixture_dir_fails_the_cell() {
    let cfg = AppConfig::load(&data_dir().join("dbdoctor.json")).unwrap();
    let res = cfg.resources().unwrap();
    let mut s = load_scenarios(&data_dir().join("scenarios")).unwrap().remove(0);
    s.fixture_dir = data_dir().join("no/such/dir");
    let (cell, report) = run_cell(&res, &s, SessionMode::Single, &BenchSettings::default());
    assert!(!cell.legal && !cell.accurate);
    assert!(cell.error.is_some());
    assert!(report.is_none());
}

#[test]
fn bundled_scenarios_load_sorted() {
    let all = load_scenarios(&data_dir().join("scenarios")).unwrap();
    assert_eq!(all.len(), 11);
    let ids: Vec<&str> = all.iter().map(|s| s.cause_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(all.iter().all(|s| s.script_path.is_absolute() && s.fixture_dir.is_dir()));
    assert!(load_scenarios(&data_dir().join("nope")).is_err());
}
