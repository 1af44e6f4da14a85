#![allow(dead_code)]

use dbdoctor_core::gateway::ScriptRule;
use dbdoctor_core::knowledge::KnowledgeBase;
use dbdoctor_core::observability::{AnomalyClass, MetricSource};
use dbdoctor_core::tools::{ToolBox, ToolRegistry};
use dbdoctor_core::{AnomalyAlert, SourceConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

pub const FINAL: &str = "Final Answer: nothing more to check.";

pub fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(rel)
}

pub fn registry() -> ToolRegistry {
    ToolRegistry::load(&data("tools.json")).unwrap()
}

pub fn kb() -> KnowledgeBase {
    KnowledgeBase::load(&data("kb.json")).unwrap()
}

pub fn thresholds() -> BTreeMap<String, f64> {
    serde_json::from_str(&std::fs::read_to_string(data("thresholds.json")).unwrap()).unwrap()
}

/// Standard tools over one of the bundled fixture sets.
pub fn toolbox(fixtures: &str) -> ToolBox {
    let source = MetricSource::new(SourceConfig::fixture(data(&format!("fixtures/{fixtures}")), thresholds())).unwrap();
    ToolBox::standard(registry(), Arc::new(source)).unwrap()
}

pub fn alert(id: &str, description: &str) -> AnomalyAlert {
    AnomalyAlert {
        alert_id: id.into(),
        start_time: 1684600060,
        end_time: 1684600120,
        description: description.into(),
        anomaly_class: AnomalyClass::RunningSlow,
    }
}

pub fn act(tool: &str, args: &str) -> String {
    format!("Thought: next I check {tool}.\nAction: {tool}\nAction Input: {args}")
}

/// Each action proposed once in order, then a final answer; reflection
/// always useful, experience judging always negative.
pub fn script(actions: &[String]) -> Vec<ScriptRule> {
    let mut rules: Vec<ScriptRule> = actions
        .iter()
        .map(|a| ScriptRule::new("[task: propose_action]", a.clone()).once())
        .collect();
    rules.push(ScriptRule::new("[task: propose_action]", FINAL));
    rules.extend(tail());
    rules
}

pub fn tail() -> Vec<ScriptRule> {
    vec![
        ScriptRule::new("[task: reflect]", "useful"),
        ScriptRule::new("[task: judge_experience]", "no"),
        ScriptRule::new("[task: final_analysis]", "Summary of the confirmed causes."),
    ]
}

pub fn missing_indexes_actions() -> Vec<String> {
    vec![
        act("scan_metrics", "{}"),
        act("fetch_metric", r#"{"metric_name": "seq_scan_rate"}"#),
        act("fetch_metric", r#"{"metric_name": "idx_scan_rate"}"#),
        act("fetch_slow_queries", r#"{"limit": 3}"#),
    ]
}
