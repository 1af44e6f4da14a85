//! Prompt tuning: ask the model for template variants from labeled samples,
//! score each variant by the share of labeled causes a diagnosis run finds,
//! and keep the best.

use crate::diagnosis::{missing_slots, DiagnosisEngine, EngineConfig, SearchParams, DEFAULT_TEMPLATE};
use crate::gateway::{ask, Gateway, GatewayError, LanguageModel, ProviderConfig};
use crate::knowledge::KnowledgeBase;
use crate::observability::{AnomalyAlert, MetricSource, SourceConfig};
use crate::tools::{ToolBox, ToolRegistry};
use crate::transcript::SessionLog;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

pub const DEFAULT_RESERVE: usize = 10;
pub const PROPOSAL_GROUP: usize = 5;

const PROPOSE_SYSTEM: &str = "You write prompt templates for a database diagnosis assistant. \
Each template must keep the placeholders {task_description}, {anomaly}, {tools} and {experience}. \
Return a JSON array of template strings.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptOrigin {
    Seeded,
    LlmSuggested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub template: String,
    pub origin: PromptOrigin,
}

impl PromptCandidate {
    pub fn seeded(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
            origin: PromptOrigin::Seeded,
        }
    }

    pub fn default_seed() -> Self {
        Self::seeded(DEFAULT_TEMPLATE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisSample {
    pub alert: AnomalyAlert,
    pub fixture_dir: PathBuf,
    pub labeled_causes: Vec<String>,
    /// Scripted replies used when this sample is diagnosed offline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub candidate: PromptCandidate,
    pub score: f64,
    /// Detected causes per sample, keyed by alert id.
    pub per_sample: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptLabError {
    #[error("no samples given")]
    NoSamples,
    #[error("sample {0} has no labeled causes")]
    UnlabeledSample(String),
    #[error("no valid candidate: {}", .0.join("; "))]
    NoValidCandidates(Vec<String>),
    #[error("nothing to select from")]
    NothingScored,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Proposal {
    pub candidates: Vec<PromptCandidate>,
    /// One diagnostic per rejected template.
    pub rejected: Vec<String>,
}

fn check_samples(samples: &[DiagnosisSample]) -> Result<(), PromptLabError> {
    if samples.is_empty() {
        return Err(PromptLabError::NoSamples);
    }
    if let Some(s) = samples.iter().find(|s| s.labeled_causes.is_empty()) {
        return Err(PromptLabError::UnlabeledSample(s.alert.alert_id.clone()));
    }
    Ok(())
}

/// Templates in a reply: a JSON array of strings when possible, otherwise
/// blocks separated by `---` lines.
fn split_templates(reply: &str) -> Vec<String> {
    let trimmed = reply.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .map(|b| b.trim_end_matches("```"))
        .unwrap_or(trimmed)
        .trim();
    if let Ok(list) = serde_json::from_str::<Vec<String>>(body) {
        return list.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    for line in trimmed.lines() {
        if line.trim() == "---" {
            out.push(std::mem::take(&mut cur));
        } else {
            cur.push_str(line);
            cur.push('\n');
        }
    }
    out.push(cur);
    out.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn describe(sample: &DiagnosisSample) -> String {
    format!(
        "Input: {} ({} to {})\nOutput: {}",
        sample.alert.description,
        sample.alert.start_time,
        sample.alert.end_time,
        sample.labeled_causes.join(", ")
    )
}

/// One request per group of five samples. Candidates keep proposal order and
/// are cut to `count`.
pub fn propose_prompts(samples: &[DiagnosisSample], count: usize, gw: &dyn LanguageModel) -> Result<Proposal, PromptLabError> {
    check_samples(samples)?;
    let mut out = Proposal::default();
    for (g, group) in samples.chunks(PROPOSAL_GROUP).enumerate() {
        let mut user = format!("[task: propose_prompt]\nGroup {} ({} examples):\n", g + 1, group.len());
        for s in group {
            user.push_str(&describe(s));
            user.push_str("\n\n");
        }
        user.push_str("Suggest templates that would lead to these outputs.");
        let reply = ask(gw, PROPOSE_SYSTEM, user)?;
        for t in split_templates(&reply) {
            let missing = missing_slots(&t);
            if missing.is_empty() {
                out.candidates.push(PromptCandidate {
                    template: t,
                    origin: PromptOrigin::LlmSuggested,
                });
            } else {
                let names: Vec<String> = missing.iter().map(|m| format!("{{{m}}}")).collect();
                out.rejected.push(format!(
                    "template {:?} is missing slot(s) {}",
                    crate::text::truncate_chars(&t, 40),
                    names.join(", ")
                ));
            }
        }
    }
    if out.candidates.is_empty() {
        return Err(PromptLabError::NoValidCandidates(out.rejected));
    }
    out.candidates.truncate(count.max(1));
    Ok(out)
}

/// Runs one diagnosis for a sample under a template and returns the cause
/// ids it reported.
pub trait SampleDiagnoser: Sync {
    fn diagnose(&self, template: &str, sample: &DiagnosisSample) -> Result<Vec<String>, String>;
}

/// Diagnoses with the real engine, a fresh scripted gateway per sample and
/// the sample's fixtures.
pub struct EngineDiagnoser {
    pub registry: ToolRegistry,
    pub kb: Arc<KnowledgeBase>,
    pub thresholds: BTreeMap<String, f64>,
    pub params: SearchParams,
    pub embed_dim: usize,
}

impl SampleDiagnoser for EngineDiagnoser {
    fn diagnose(&self, template: &str, sample: &DiagnosisSample) -> Result<Vec<String>, String> {
        let script = sample
            .script_path
            .as_ref()
            .ok_or_else(|| format!("sample {} has no script", sample.alert.alert_id))?;
        let mut cfg = ProviderConfig::scripted(script.clone());
        cfg.embed_dim = self.embed_dim;
        let gw = Gateway::from_config(&cfg).map_err(|e| e.to_string())?;
        let source = MetricSource::new(SourceConfig::fixture(sample.fixture_dir.clone(), self.thresholds.clone())).map_err(|e| e.to_string())?;
        let tools = ToolBox::standard(self.registry.clone(), Arc::new(source)).map_err(|e| e.to_string())?;
        let config = EngineConfig {
            params: self.params.clone(),
            template: template.to_string(),
            ..EngineConfig::default()
        };
        let engine = DiagnosisEngine::new(&gw, tools, Some(&self.kb), config);
        let log = SessionLog::new();
        engine.run(&sample.alert, &log).map(|r| r.cause_ids()).map_err(|e| e.to_string())
    }
}

/// Mean over samples of the fraction of labeled causes detected. A failed
/// run contributes 0.
pub fn score_prompt(candidate: &PromptCandidate, samples: &[DiagnosisSample], diagnoser: &dyn SampleDiagnoser) -> Result<ScoredPrompt, PromptLabError> {
    check_samples(samples)?;
    let mut per_sample = BTreeMap::new();
    let mut total = 0.0;
    for s in samples {
        let detected = diagnoser.diagnose(&candidate.template, s).unwrap_or_default();
        let hit = s
            .labeled_causes
            .iter()
            .filter(|l| detected.iter().any(|d| d.eq_ignore_ascii_case(l)))
            .count();
        total += hit as f64 / s.labeled_causes.len() as f64;
        per_sample.insert(s.alert.alert_id.clone(), detected);
    }
    Ok(ScoredPrompt {
        candidate: candidate.clone(),
        score: total / samples.len() as f64,
        per_sample,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub reserved: Vec<ScoredPrompt>,
    pub chosen: PromptCandidate,
}

/// Top `reserve` by score; equal scores keep input order, so the earlier
/// candidate wins a tie.
pub fn select_template(scored: &[ScoredPrompt], reserve: usize) -> Result<Selection, PromptLabError> {
    if scored.is_empty() {
        return Err(PromptLabError::NothingScored);
    }
    let mut reserved = scored.to_vec();
    reserved.sort_by_key(|s| std::cmp::Reverse(crate::retrieval::score_key(s.score)));
    reserved.truncate(reserve.max(1));
    let chosen = reserved[0].candidate.clone();
    Ok(Selection { reserved, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_json_and_dashes() {
        assert_eq!(split_templates(r#"["a {x}", "b"]"#), vec!["a {x}", "b"]);
        assert_eq!(split_templates("one\n---\ntwo\n"), vec!["one", "two"]);
    }

    fn scored(s: f64, tag: &str) -> ScoredPrompt {
        ScoredPrompt {
            candidate: PromptCandidate::seeded(tag),
            score: s,
            per_sample: BTreeMap::new(),
        }
    }

    #[test]
    fn selection_is_stable() {
        let list = vec![scored(0.2, "a"), scored(0.8, "b"), scored(0.8, "c"), scored(0.5, "d")];
        let sel = select_template(&list, 10).unwrap();
        assert_eq!(sel.chosen.template, "b");
        let order: Vec<&str> = sel.reserved.iter().map(|s| s.candidate.template.as_str()).collect();
        assert_eq!(order, vec!["b", "c", "d", "a"]);
        assert_eq!(select_template(&list, 2).unwrap().reserved.len(), 2);
    }
}
