//! Scenario bench: every scenario under every mode with its scripted
//! gateway and bundled fixtures, scored for legality and accuracy.

use crate::config::{read_json, Resources};
use crate::runner::{run_diagnosis, RunRequest, SessionMode};
use dbdoctor_core::collab::EnvironmentSettings;
use dbdoctor_core::gateway::{Gateway, ProviderConfig};
use dbdoctor_core::observability::SourceConfig;
use dbdoctor_core::{AnomalyAlert, DiagnosisReport, SearchParams, SessionLog};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub cause_id: String,
    pub alert: AnomalyAlert,
    pub fixture_dir: PathBuf,
    /// Replies for the grounded run.
    pub script_path: PathBuf,
    /// Replies for the metrics-only run.
    pub baseline_script_path: PathBuf,
    pub expected_legal: bool,
    pub expected_accurate_dbot: bool,
    pub expected_accurate_baseline: bool,
}

impl Scenario {
    pub fn script_for(&self, mode: SessionMode) -> &Path {
        match mode {
            SessionMode::BaselineMetricsOnly => &self.baseline_script_path,
            _ => &self.script_path,
        }
    }

    pub fn expected_accurate(&self, mode: SessionMode) -> bool {
        match mode {
            SessionMode::BaselineMetricsOnly => self.expected_accurate_baseline,
            _ => self.expected_accurate_dbot,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("cannot read scenarios from {path}: {reason}")]
    Scenarios { path: String, reason: String },
}

/// Every `<dir>/<name>/scenario.json`, sorted by directory name. Paths in a
/// scenario file are relative to its own directory.
pub fn load_scenarios(dir: &Path) -> Result<Vec<Scenario>, BenchError> {
    let err = |reason: String| BenchError::Scenarios {
        path: dir.display().to_string(),
        reason,
    };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scenario.json").is_file())
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for d in dirs {
        let mut s: Scenario = read_json(&d.join("scenario.json")).map_err(|e| err(e.to_string()))?;
        for p in [&mut s.fixture_dir, &mut s.script_path, &mut s.baseline_script_path] {
            if p.is_relative() {
                *p = d.join(&*p);
            }
        }
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub legal: bool,
    pub accurate: bool,
    /// Causes the run reported.
    pub reported: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    /// mode → cause id → cell.
    pub per_scenario: BTreeMap<SessionMode, BTreeMap<String, CellResult>>,
    pub legality_count: BTreeMap<SessionMode, usize>,
    pub accuracy_count: BTreeMap<SessionMode, usize>,
}

/// Well formed and about this alert: the report echoes the alert and either
/// names a cause or carries an analysis.
pub fn is_legal(report: &DiagnosisReport, alert: &AnomalyAlert) -> bool {
    report.alert == *alert && !report.bullet_summary.trim().is_empty() && (!report.causes.is_empty() || !report.analysis.trim().is_empty())
}

pub struct BenchSettings {
    pub params: SearchParams,
    pub embed_dim: usize,
    pub collab: EnvironmentSettings,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            params: SearchParams::default(),
            embed_dim: 64,
            collab: EnvironmentSettings::default(),
        }
    }
}

/// One scenario in one mode. Also returns the session log so callers can
/// inspect the transcript.
pub fn run_cell(res: &Resources, scenario: &Scenario, mode: SessionMode, settings: &BenchSettings) -> (CellResult, Option<DiagnosisReport>) {
    let fail = |e: String| {
        (
            CellResult {
                legal: false,
                accurate: false,
                reported: Vec::new(),
                error: Some(e),
            },
            None,
        )
    };
    let script = scenario.script_for(mode);
    if !script.is_file() {
        return fail(format!("missing script {}", script.display()));
    }
    if !scenario.fixture_dir.is_dir() {
        return fail(format!("missing fixtures {}", scenario.fixture_dir.display()));
    }
    let mut provider = ProviderConfig::scripted(script);
    provider.embed_dim = settings.embed_dim;
    let gw = match Gateway::from_config(&provider) {
        Ok(g) => g,
        Err(e) => return fail(e.to_string()),
    };
    let log = SessionLog::new();
    let req = RunRequest {
        alert: &scenario.alert,
        mode,
        source: SourceConfig::fixture(scenario.fixture_dir.clone(), res.thresholds.clone()),
        params: settings.params.clone(),
        collab: settings.collab.clone(),
    };
    match run_diagnosis(res, &gw, req, &log).0 {
        Ok(report) => {
            let reported = report.cause_ids();
            (
                CellResult {
                    legal: is_legal(&report, &scenario.alert),
                    accurate: reported.iter().any(|c| c.eq_ignore_ascii_case(&scenario.cause_id)),
                    reported,
                    error: None,
                },
                Some(report),
            )
        }
        Err(e) => fail(e),
    }
}

pub fn run_bench(res: &Resources, scenarios: &[Scenario], modes: &[SessionMode], settings: &BenchSettings) -> BenchResult {
    let mut out = BenchResult::default();
    for &mode in modes {
        let cells = out.per_scenario.entry(mode).or_default();
        for s in scenarios {
            let (cell, _) = run_cell(res, s, mode, settings);
            cells.insert(s.cause_id.clone(), cell);
        }
        out.legality_count.insert(mode, cells.values().filter(|c| c.legal).count());
        out.accuracy_count.insert(mode, cells.values().filter(|c| c.accurate).count());
    }
    out
}

/// Plain-text table: one row per scenario, one column pair per mode.
pub fn render_table(result: &BenchResult) -> String {
    let modes: Vec<SessionMode> = result.per_scenario.keys().copied().collect();
    let mut ids: Vec<&String> = result.per_scenario.values().flat_map(|m| m.keys()).collect();
    ids.sort();
    ids.dedup();
    let mark = |b: bool| if b { "yes" } else { "no" };
    let mut out = format!("{:<24}", "cause");
    for m in &modes {
        out.push_str(&format!(" | {:<21}", format!("{m} legal/accurate")));
    }
    out.push('\n');
    for id in &ids {
        out.push_str(&format!("{id:<24}"));
        for m in &modes {
            let cell = result.per_scenario[m].get(*id);
            let text = cell.map_or("-".to_string(), |c| format!("{}/{}", mark(c.legal), mark(c.accurate)));
            out.push_str(&format!(" | {text:<21}"));
        }
        out.push('\n');
    }
    for m in &modes {
        let n = result.per_scenario[m].len();
        out.push_str(&format!(
            "{m}: legality {}/{n}, accuracy {}/{n}\n",
            result.legality_count[m], result.accuracy_count[m]
        ));
    }
    out
}
