//! One diagnosis in a given mode, with access counters for auditing.

use crate::config::Resources;
use dbdoctor_core::collab::{run_collaborative, AgentRole, EnvironmentSettings};
use dbdoctor_core::diagnosis::{DiagnosisEngine, EngineConfig, EngineMode};
use dbdoctor_core::gateway::LanguageModel;
use dbdoctor_core::knowledge::KnowledgeBase;
use dbdoctor_core::observability::{MetricSource, SourceConfig};
use dbdoctor_core::tools::ToolBox;
use dbdoctor_core::{AnomalyAlert, DiagnosisReport, SearchParams, SessionLog};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    Single,
    Collaborative,
    BaselineMetricsOnly,
}

impl SessionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionMode::Single => "single",
            SessionMode::Collaborative => "collaborative",
            SessionMode::BaselineMetricsOnly => "baseline-metrics-only",
        }
    }
}

impl std::str::FromStr for SessionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" | "dbot" => Ok(SessionMode::Single),
            "collaborative" => Ok(SessionMode::Collaborative),
            "baseline-metrics-only" | "baseline" => Ok(SessionMode::BaselineMetricsOnly),
            other => Err(format!("unknown mode {other:?} (single, collaborative, baseline-metrics-only)")),
        }
    }
}

impl std::fmt::Display for SessionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a run touched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccessCounters {
    pub kb_lookups: u64,
    pub tool_calls: BTreeMap<String, u64>,
    pub completion_calls: u64,
}

pub struct RunRequest<'a> {
    pub alert: &'a AnomalyAlert,
    pub mode: SessionMode,
    pub source: SourceConfig,
    pub params: SearchParams,
    pub collab: EnvironmentSettings,
}

/// Runs a diagnosis against a private copy of the knowledge base so lookups
/// can be attributed to this run alone. Errors come back as text together
/// with the counters gathered so far.
pub fn run_diagnosis(
    res: &Resources,
    gw: &dyn LanguageModel,
    req: RunRequest<'_>,
    log: &SessionLog,
) -> (Result<DiagnosisReport, String>, AccessCounters) {
    let mut counters = AccessCounters::default();
    let source = match MetricSource::new(req.source) {
        Ok(s) => Arc::new(s),
        Err(e) => return (Err(e.to_string()), counters),
    };
    let tools = match ToolBox::standard(res.registry.clone(), source) {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), counters),
    };
    let kb = KnowledgeBase::from_segments(res.kb.snapshot());
    let config = EngineConfig {
        params: req.params,
        mode: match req.mode {
            SessionMode::BaselineMetricsOnly => EngineMode::MetricsOnly,
            _ => EngineMode::Grounded,
        },
        keyword_map: match req.mode {
            SessionMode::BaselineMetricsOnly => None,
            _ => res.keywords.clone(),
        },
        ..EngineConfig::default()
    };
    let kb_ref = (req.mode != SessionMode::BaselineMetricsOnly).then_some(&kb);
    let engine = DiagnosisEngine::new(gw, tools.clone(), kb_ref, config);
    let result = match req.mode {
        SessionMode::Single | SessionMode::BaselineMetricsOnly => engine.run(req.alert, log).map_err(|a| a.to_string()),
        SessionMode::Collaborative => run_collaborative(req.alert, AgentRole::builtin(), &req.collab, &engine, log)
            .map(|o| o.report)
            .map_err(|a| a.to_string()),
    };
    counters.kb_lookups = kb.lookups();
    counters.tool_calls = tools.call_counts();
    counters.completion_calls = gw.completion_calls();
    (result, counters)
}
