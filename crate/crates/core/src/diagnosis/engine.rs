//! The diagnosis loop.
//!
//! One simulation: select a node, ask the model for the next action under
//! it, execute that action as a new child, check whether the evidence now
//! satisfies an experience segment, backpropagate the reward, then let the
//! model reflect on each step of the path. The loop stops when the
//! expansion budget is spent, when `no_progress_limit` simulations in a row
//! confirm nothing new, or when the model says nothing is left to check.

use super::criteria::{parse_criteria, Truth};
use super::prompts::{render_template, DEFAULT_TASK_DESCRIPTION, DEFAULT_TEMPLATE, FINAL_SYSTEM, JUDGE_SYSTEM, PROPOSE_SYSTEM, REFLECT_SYSTEM};
use super::report::{bullet_summary, DiagnosisReport, RootCause, SearchStats, Termination};
use super::tree::{select, DiagnosisTree, SearchParams, TreeError};
use crate::gateway::{ask, ChatMessage, CompletionRequest, GatewayError, LanguageModel, ToolInvocation};
use crate::knowledge::{ExperienceSegment, KnowledgeBase};
use crate::observability::{fmt_value, AnomalyAlert};
use crate::retrieval::{rank_tools, KeywordApiMap, RetrievalError, RetrievalMode};
use crate::text::truncate_chars;
use crate::tools::{MetricScope, ToolArgs, ToolBox, ToolContext, ToolSpec};
use crate::transcript::{ChatRecord, SessionLog};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

/// `Grounded` is the full system. `MetricsOnly` is the comparison setting:
/// observation tools only, no knowledge base, no tool retrieval, and causes
/// taken from the model's closing analysis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineMode {
    #[default]
    Grounded,
    MetricsOnly,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub params: SearchParams,
    pub mode: EngineMode,
    pub template: String,
    pub task_description: String,
    pub tool_top_k: usize,
    pub retrieval: RetrievalMode,
    pub speaker: String,
    pub keyword_map: Option<KeywordApiMap>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            params: SearchParams::default(),
            mode: EngineMode::Grounded,
            template: DEFAULT_TEMPLATE.into(),
            task_description: DEFAULT_TASK_DESCRIPTION.into(),
            tool_top_k: 8,
            retrieval: RetrievalMode::Bm25,
            speaker: "Diagnoser".into(),
            keyword_map: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("invalid alert: {0}")]
    Alert(String),
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error("search tree: {0}")]
    Tree(#[from] TreeError),
}

/// A run that stopped on an error. What was gathered so far is kept.
#[derive(Debug)]
pub struct DiagnosisAbort {
    pub error: EngineError,
    pub transcript: Vec<ChatRecord>,
    pub causes: Vec<RootCause>,
}

impl std::fmt::Display for DiagnosisAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "diagnosis aborted: {}", self.error)
    }
}

impl std::error::Error for DiagnosisAbort {}

/// Evidence gathered during a session. Shared across agents in
/// collaborative mode so a cause is only rewarded once.
#[derive(Clone, Debug, Default)]
pub struct Investigation {
    /// Highest value seen per metric and the node that saw it.
    pub peaks: BTreeMap<String, (f64, String)>,
    /// Metrics reported abnormal and the first node that said so.
    pub abnormal: BTreeMap<String, String>,
    pub causes: Vec<RootCause>,
    /// Model verdicts for segments whose steps could not be parsed.
    judged: BTreeMap<String, bool>,
    /// Every successful observation, as (node ref, text).
    pub observations: Vec<(String, String)>,
}

impl Investigation {
    pub fn has_cause(&self, id: &str) -> bool {
        self.causes.iter().any(|c| c.cause_id == id)
    }

    fn record_peak(&mut self, metric: &str, peak: f64, node: &str) {
        match self.peaks.get(metric) {
            Some((p, _)) if *p >= peak => {}
            _ => {
                self.peaks.insert(metric.to_string(), (peak, node.to_string()));
            }
        }
    }
}

/// Per-call view of who is searching and what they may see.
pub(crate) struct Scope<'s> {
    pub speaker: &'s str,
    /// Prefix for evidence references; differs from the speaker when an
    /// agent searches more than once.
    pub node_prefix: String,
    pub charter: Option<&'s str>,
    pub memory: &'s [String],
    pub metric_scope: Option<&'s MetricScope>,
    pub shared: Vec<ChatRecord>,
    pub params: SearchParams,
    /// Append each tool step to the session log as it happens.
    pub record_steps: bool,
    pub round: Option<u32>,
}

pub(crate) struct SearchOutcome {
    pub tree: DiagnosisTree,
    pub termination: Termination,
    /// Tool steps in execution order, failed ones included.
    pub steps: Vec<ChatRecord>,
    /// Steps that reached a tool and returned an observation.
    pub successful_steps: Vec<ChatRecord>,
    pub feedback: Vec<String>,
    pub new_causes: Vec<String>,
}

enum Proposal {
    Act {
        thought: Option<String>,
        tool: String,
        args: Result<ToolArgs, String>,
    },
    Final,
    Unparseable {
        thought: Option<String>,
        reason: String,
    },
}

fn line_re(label: &str) -> Regex {
    Regex::new(&format!(r"(?im)^\s*{label}\s*:\s*(.*)$")).expect("valid regex")
}

fn thought_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| line_re("thought"))
}

fn action_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| line_re("action"))
}

fn final_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?is)final answer\s*:\s*(.*)").expect("valid regex"))
}

fn input_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?is)action input\s*:\s*(.*?)(?:\n\s*observation\s*:|\z)").expect("valid regex"))
}

fn parse_args(raw: &str) -> Result<ToolArgs, String> {
    let raw = raw.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    if raw.is_empty() {
        return Ok(ToolArgs::new());
    }
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| format!("Action Input is not valid JSON: {e}"))?;
    match v {
        serde_json::Value::Object(m) => Ok(m.into_iter().collect()),
        _ => Err("Action Input must be a JSON object".into()),
    }
}

fn parse_proposal(msg: &ChatMessage) -> Proposal {
    let text = msg.content.as_str();
    let thought = thought_re()
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .filter(|t| !t.is_empty());
    if let Some(call) = &msg.tool_call {
        return Proposal::Act {
            thought: thought.or_else(|| Some(text.trim().to_string()).filter(|t| !t.is_empty())),
            tool: call.tool_name.clone(),
            args: Ok(call.arguments.clone()),
        };
    }
    // "Action Input:" also matches the action pattern's prefix; skip it.
    let action = action_re()
        .captures_iter(text)
        .find(|c| !c[0].trim_start().to_lowercase().starts_with("action input"))
        .map(|c| c[1].trim().trim_matches('`').trim_end_matches("()").trim_end_matches(['.', ',']).to_string());
    match action {
        Some(tool) if !tool.is_empty() => {
            let args = match input_re().captures(text) {
                Some(c) => parse_args(&c[1]),
                None => Ok(ToolArgs::new()),
            };
            Proposal::Act { thought, tool, args }
        }
        _ => match final_re().captures(text) {
            Some(_) => Proposal::Final,
            None => Proposal::Unparseable {
                thought,
                reason: "the reply names no Action".into(),
            },
        },
    }
}

fn is_not_useful(reply: &str) -> bool {
    let l = reply.trim().to_lowercase();
    let first: String = l.chars().take_while(|c| c.is_alphabetic()).collect();
    first == "no" || l.contains("not useful") || l.contains("useless") || l.contains("no useful")
}

fn is_yes(reply: &str) -> bool {
    reply.trim().to_lowercase().starts_with("yes")
}

fn root_cause_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?im)^\s*(?:[-*]\s*)?(root cause|solution)\s*:\s*(.+?)\s*$").expect("valid regex"))
}

/// `Root cause:` lines with the `Solution:` lines that follow each.
fn causes_from_analysis(text: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for c in root_cause_re().captures_iter(text) {
        let value = c[2].trim().to_string();
        if c[1].eq_ignore_ascii_case("root cause") {
            let id: String = value
                .chars()
                .take_while(|ch| ch.is_ascii_alphanumeric() || *ch == '_')
                .collect::<String>()
                .to_uppercase();
            if !id.is_empty() && !out.iter().any(|(x, _)| *x == id) {
                out.push((id, Vec::new()));
            }
        } else if let Some(last) = out.last_mut() {
            last.1.push(value);
        }
    }
    out
}

fn describe_segment(s: &ExperienceSegment) -> String {
    format!("- {} (metrics: {}): {}\n  Steps: {}", s.name, s.metrics.join(", "), s.content, s.steps)
}

pub struct DiagnosisEngine<'a> {
    pub gw: &'a dyn LanguageModel,
    pub tools: ToolBox,
    pub kb: Option<&'a KnowledgeBase>,
    pub config: EngineConfig,
}

impl<'a> DiagnosisEngine<'a> {
    /// In metrics-only mode the toolbox is cut down to observation tools and
    /// the knowledge base is dropped.
    pub fn new(gw: &'a dyn LanguageModel, tools: ToolBox, kb: Option<&'a KnowledgeBase>, config: EngineConfig) -> Self {
        let (tools, kb) = match config.mode {
            EngineMode::Grounded => (tools, kb),
            EngineMode::MetricsOnly => (tools.restrict(ToolSpec::is_observation), None),
        };
        Self { gw, tools, kb, config }
    }

    /// Full single-agent diagnosis. The transcript is written to `log` as it
    /// grows; human feedback queued on `log` is picked up between
    /// simulations.
    pub fn run(&self, alert: &AnomalyAlert, log: &SessionLog) -> Result<DiagnosisReport, DiagnosisAbort> {
        self.run_with_tree(alert, log).map(|(r, _)| r)
    }

    /// `run`, also returning the final search tree.
    pub fn run_with_tree(&self, alert: &AnomalyAlert, log: &SessionLog) -> Result<(DiagnosisReport, DiagnosisTree), DiagnosisAbort> {
        let mut inv = Investigation::default();
        let abort = |error: EngineError, inv: &Investigation| DiagnosisAbort {
            error,
            transcript: log.records(),
            causes: inv.causes.clone(),
        };
        let scope = Scope {
            speaker: &self.config.speaker,
            node_prefix: self.config.speaker.clone(),
            charter: None,
            memory: &[],
            metric_scope: None,
            shared: Vec::new(),
            params: self.config.params.clone(),
            record_steps: true,
            round: None,
        };
        let outcome = match self.search(alert, log, &scope, &mut inv) {
            Ok(o) => o,
            Err(e) => return Err(abort(e, &inv)),
        };
        let analysis = match self.final_analysis(alert, &inv) {
            Ok(a) => a,
            Err(e) => return Err(abort(e.into(), &inv)),
        };
        let mut notes: Vec<String> = outcome.feedback.iter().map(|f| format!("Human feedback: {f}")).collect();
        if self.config.mode == EngineMode::MetricsOnly {
            self.adopt_stated_causes(&analysis, &outcome.tree, &mut inv, &mut notes);
        }
        log.append(ChatRecord::analysis(self.config.speaker.clone(), analysis.clone()));
        // Feedback that arrived during the closing call still counts.
        notes.extend(log.drain_feedback().into_iter().map(|f| format!("Human feedback: {f}")));
        let report = DiagnosisReport {
            alert: alert.clone(),
            bullet_summary: bullet_summary(&inv.causes),
            causes: inv.causes,
            analysis,
            transcript: log.records(),
            notes,
            stats: SearchStats {
                simulations: outcome.tree.big_n,
                nodes: outcome.tree.expansions(),
                termination: outcome.termination,
            },
        };
        Ok((report, outcome.tree))
    }

    /// Metrics-only runs name causes in prose. A stated cause is kept only if
    /// some successful observation exists to cite.
    fn adopt_stated_causes(&self, analysis: &str, tree: &DiagnosisTree, inv: &mut Investigation, notes: &mut Vec<String>) {
        let cited: Vec<String> = tree
            .nodes
            .values()
            .filter(|n| n.parent.is_some() && !n.failed && n.observation.is_some())
            .map(|n| format!("{}#{}", self.config.speaker, n.node_id))
            .collect();
        for (id, solutions) in causes_from_analysis(analysis) {
            if inv.has_cause(&id) {
                continue;
            }
            if cited.is_empty() {
                notes.push(format!("Dropped {id}: no observation to cite."));
                continue;
            }
            inv.causes.push(RootCause {
                cause_id: id,
                evidence: format!("Stated in the closing analysis after {} observation(s).", cited.len()),
                evidence_nodes: cited.clone(),
                matched_experience: None,
                solutions,
                reported_by: None,
            });
        }
    }

    fn final_analysis(&self, alert: &AnomalyAlert, inv: &Investigation) -> Result<String, GatewayError> {
        let mut user = format!(
            "[task: final_analysis]\nAnomaly: {} ({} to {})\n\nObservations:\n",
            alert.description, alert.start_time, alert.end_time
        );
        if inv.observations.is_empty() {
            user.push_str("- none\n");
        }
        for (node, obs) in &inv.observations {
            user.push_str(&format!("- [{node}] {}\n", truncate_chars(obs, 300)));
        }
        user.push_str("\nConfirmed root causes:\n");
        if inv.causes.is_empty() {
            user.push_str("- none\n");
        }
        for c in &inv.causes {
            user.push_str(&format!("- {}: {} Solutions: {}\n", c.cause_id, c.evidence, c.solutions.join(" ")));
        }
        ask(self.gw, FINAL_SYSTEM, user)
    }

    fn retrieved_tools(&self, alert: &AnomalyAlert) -> Result<Vec<ToolSpec>, EngineError> {
        let registry = self.tools.registry();
        if self.config.mode == EngineMode::MetricsOnly {
            return Ok(registry.specs().to_vec());
        }
        let mut tools = rank_tools(self.config.retrieval, &alert.description, registry, self.config.tool_top_k.max(1), self.gw, None)?;
        if let Some(map) = &self.config.keyword_map {
            for name in map.map_keywords(&alert.description) {
                if tools.iter().any(|t| t.name == name) {
                    continue;
                }
                if let Some(spec) = registry.get(&name) {
                    tools.push(spec.clone());
                }
            }
        }
        Ok(tools)
    }

    fn experience_text(&self, inv: &Investigation) -> String {
        let Some(kb) = self.kb else {
            return "(none)".into();
        };
        let abnormal: BTreeSet<String> = inv.abnormal.keys().cloned().collect();
        let mut lines: Vec<String> = kb.segments_for_metrics(&abnormal).iter().map(describe_segment).collect();
        lines.extend(kb.procedures().iter().map(describe_segment));
        if lines.is_empty() {
            "(nothing matches the evidence yet)".into()
        } else {
            lines.join("\n")
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn propose(
        &self,
        alert: &AnomalyAlert,
        tree: &DiagnosisTree,
        at: u64,
        tools: &[ToolSpec],
        inv: &Investigation,
        scope: &Scope<'_>,
        feedback: &[String],
    ) -> Result<ChatMessage, EngineError> {
        let anomaly = format!(
            "{} (class: {:?}, from {} to {})",
            alert.description, alert.anomaly_class, alert.start_time, alert.end_time
        );
        let tool_text = tools.iter().map(|t| format!("- {}", t.signature())).collect::<Vec<_>>().join("\n");
        let experience = self.experience_text(inv);
        let body = render_template(
            &self.config.template,
            &[
                ("task_description", self.config.task_description.as_str()),
                ("anomaly", anomaly.as_str()),
                ("tools", tool_text.as_str()),
                ("experience", experience.as_str()),
            ],
        );
        let mut user = format!("[task: propose_action]\n{body}\n\nYou are {}.", scope.speaker);
        if let Some(ch) = scope.charter {
            user.push_str(&format!(" {ch}"));
        }
        user.push_str("\n\nSteps on this branch:\n");
        let path = tree.path_to(at)?;
        if path.len() == 1 {
            user.push_str("- none yet\n");
        }
        for id in path.into_iter().skip(1) {
            let n = tree.node(id)?;
            let act = n
                .action
                .as_ref()
                .map(|a| format!("{} {}", a.tool_name, a.arguments_json()))
                .unwrap_or_else(|| "(no action)".into());
            let obs = n.observation.as_deref().unwrap_or("");
            user.push_str(&format!("- {act} -> {}\n", truncate_chars(obs, 400)));
        }
        if !scope.memory.is_empty() {
            user.push_str("\nYour notes so far:\n");
            for l in scope.memory {
                user.push_str(l);
                user.push('\n');
            }
        }
        if !scope.shared.is_empty() {
            user.push_str("\nDiscussion so far:\n");
            for r in &scope.shared {
                user.push_str(&format!("- {}: {}\n", r.speaker, truncate_chars(&r.analysis, 400)));
            }
        }
        for f in feedback {
            user.push_str(&format!("\nHuman feedback: {f}\n"));
        }
        if !inv.abnormal.is_empty() {
            user.push_str(&format!(
                "\nAbnormal metrics: {}\n",
                inv.abnormal.keys().cloned().collect::<Vec<_>>().join(", ")
            ));
        }
        if !inv.causes.is_empty() {
            user.push_str(&format!(
                "Confirmed root causes: {}\n",
                inv.causes.iter().map(|c| c.cause_id.as_str()).collect::<Vec<_>>().join(", ")
            ));
        }
        let req = CompletionRequest::prompt(PROPOSE_SYSTEM, user).with_tools(tools.to_vec());
        Ok(self.gw.complete(&req)?)
    }

    /// Checks candidate segments against the evidence and records newly
    /// confirmed causes. Returns their ids.
    fn match_experience(&self, inv: &mut Investigation, speaker: &str) -> Result<Vec<String>, GatewayError> {
        let Some(kb) = self.kb else {
            return Ok(Vec::new());
        };
        let abnormal: BTreeSet<String> = inv.abnormal.keys().cloned().collect();
        if abnormal.is_empty() {
            return Ok(Vec::new());
        }
        let mut found = Vec::new();
        for seg in kb.segments_for_metrics(&abnormal) {
            let id = seg.cause_id();
            if inv.has_cause(&id) {
                continue;
            }
            let mut nodes: Vec<String> = seg
                .metrics
                .iter()
                .filter_map(|m| inv.abnormal.get(m).cloned())
                .collect();
            let evidence = match parse_criteria(&seg.steps, &seg.metrics) {
                Some(criteria) => {
                    let peaks = &inv.peaks;
                    if criteria.evaluate(&|m| peaks.get(m).map(|p| p.0)) != Truth::True {
                        continue;
                    }
                    let mut parts = Vec::new();
                    for m in criteria.metrics() {
                        if let Some((v, node)) = peaks.get(&m) {
                            parts.push(format!("{m} peaked at {} [{node}]", fmt_value(*v)));
                            nodes.push(node.clone());
                        }
                    }
                    format!("{}; matches the {} experience.", parts.join(", "), seg.name)
                }
                None => {
                    let verdict = match inv.judged.get(&seg.name) {
                        Some(v) => *v,
                        None => {
                            let v = is_yes(&ask(self.gw, JUDGE_SYSTEM, judge_prompt(&seg, inv))?);
                            inv.judged.insert(seg.name.clone(), v);
                            v
                        }
                    };
                    if !verdict {
                        continue;
                    }
                    let metrics: Vec<&String> = seg.metrics.iter().filter(|m| abnormal.contains(*m)).collect();
                    format!(
                        "{} abnormal; judged to satisfy the {} experience.",
                        metrics.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", "),
                        seg.name
                    )
                }
            };
            let mut seen = BTreeSet::new();
            nodes.retain(|n| seen.insert(n.clone()));
            if nodes.is_empty() {
                continue;
            }
            inv.causes.push(RootCause {
                cause_id: id.clone(),
                evidence,
                evidence_nodes: nodes,
                matched_experience: Some(seg.name.clone()),
                solutions: seg.effective_solutions(),
                reported_by: Some(speaker.to_string()),
            });
            found.push(id);
        }
        Ok(found)
    }

    fn reflect(&self, tree: &mut DiagnosisTree, leaf: u64) -> Result<(), EngineError> {
        for id in tree.path_to(leaf)? {
            let node = tree.node(id)?;
            if node.parent.is_none() || node.failed {
                continue;
            }
            let act = node
                .action
                .as_ref()
                .map(|a| format!("{} {}", a.tool_name, a.arguments_json()))
                .unwrap_or_default();
            let user = format!(
                "[task: reflect]\nStep: {act}\nObservation: {}\nDid this step find useful information?",
                truncate_chars(node.observation.as_deref().unwrap_or(""), 400)
            );
            let useful = !is_not_useful(&ask(self.gw, REFLECT_SYSTEM, user)?);
            tree.apply_reflection(id, useful, self.config.params.c)?;
        }
        Ok(())
    }

    pub(crate) fn search(
        &self,
        alert: &AnomalyAlert,
        log: &SessionLog,
        scope: &Scope<'_>,
        inv: &mut Investigation,
    ) -> Result<SearchOutcome, EngineError> {
        let params = &scope.params;
        params.validate().map_err(EngineError::Config)?;
        alert.validate().map_err(|e| EngineError::Alert(e.to_string()))?;
        let window = alert.window().map_err(|e| EngineError::Alert(e.to_string()))?;
        let tools = self.retrieved_tools(alert)?;
        let ctx = ToolContext {
            window,
            metric_scope: scope.metric_scope,
        };
        let mut tree = DiagnosisTree::new(alert.description.clone());
        let mut out = SearchOutcome {
            tree: DiagnosisTree::new(""),
            termination: Termination::NoProgress,
            steps: Vec::new(),
            successful_steps: Vec::new(),
            feedback: Vec::new(),
            new_causes: Vec::new(),
        };
        let mut fruitless = 0u32;
        let mut last_obs = String::new();
        let termination = loop {
            if tree.expansions() >= u64::from(params.max_nodes) {
                break Termination::MaxNodes;
            }
            if fruitless >= params.no_progress_limit {
                break Termination::NoProgress;
            }
            out.feedback.extend(log.drain_feedback());
            let at = match select(&tree, params, &last_obs) {
                Ok(at) => at,
                Err(TreeError::NoExpandableNodes) => break Termination::NoExpandableNodes,
                Err(e) => return Err(e.into()),
            };
            let reply = self.propose(alert, &tree, at, &tools, inv, scope, &out.feedback)?;
            let proposal = parse_proposal(&reply);
            if let Proposal::Final = proposal {
                break Termination::Concluded;
            }
            let child = tree.add_child(at)?;
            let node_ref = format!("{}#{}", scope.node_prefix, child);
            let mut rec = ChatRecord {
                speaker: scope.speaker.to_string(),
                round: scope.round,
                ..Default::default()
            };
            let mut new_causes = Vec::new();
            match proposal {
                Proposal::Final => unreachable!("handled above"),
                Proposal::Unparseable { thought, reason } => {
                    rec.thought = thought.clone();
                    tree.node_mut(child)?.thought = thought;
                    tree.mark_failed(child, format!("Could not dispatch: {reason}."))?;
                }
                Proposal::Act { thought, tool, args } => {
                    rec.thought = thought.clone();
                    rec.action = Some(tool.clone());
                    tree.node_mut(child)?.thought = thought;
                    let dispatched = args.and_then(|a| ToolInvocation::new(tool.clone(), a).map_err(|e| e.to_string()));
                    match dispatched {
                        Err(reason) => tree.mark_failed(child, format!("Could not dispatch {tool}: {reason}."))?,
                        Ok(inv_call) => {
                            rec.action_input = Some(inv_call.arguments_json());
                            let result = self.tools.call(&inv_call.tool_name, &inv_call.arguments, &ctx);
                            tree.node_mut(child)?.action = Some(inv_call);
                            match result {
                                Err(e) => tree.mark_failed(child, format!("Could not dispatch: {e}."))?,
                                Ok(output) => {
                                    for r in &output.readings {
                                        inv.record_peak(&r.metric, r.peak, &node_ref);
                                    }
                                    for m in &output.abnormal {
                                        inv.abnormal.entry(m.clone()).or_insert_with(|| node_ref.clone());
                                    }
                                    inv.observations.push((node_ref.clone(), output.text.clone()));
                                    tree.node_mut(child)?.observation = Some(output.text);
                                    new_causes = self.match_experience(inv, scope.speaker)?;
                                }
                            }
                        }
                    }
                }
            }
            let node = tree.node(child)?;
            rec.observation = node.observation.clone();
            rec.analysis = if !new_causes.is_empty() {
                format!("Confirmed root cause {}.", new_causes.join(", "))
            } else if node.failed {
                "The step failed; trying another branch.".into()
            } else {
                rec.thought.clone().unwrap_or_default()
            };
            last_obs = node.observation.clone().unwrap_or_default();
            let failed = node.failed;
            let reward = if new_causes.is_empty() { 0.0 } else { 1.0 };
            fruitless = if new_causes.is_empty() { fruitless + 1 } else { 0 };
            tree.backpropagate(child, reward)?;
            self.reflect(&mut tree, child)?;
            out.new_causes.extend(new_causes);
            if !failed {
                out.successful_steps.push(rec.clone());
            }
            if scope.record_steps {
                rec = log.append(rec);
            }
            out.steps.push(rec);
        };
        out.tree = tree;
        out.termination = termination;
        Ok(out)
    }
}

fn judge_prompt(seg: &ExperienceSegment, inv: &Investigation) -> String {
    let mut user = format!("[task: judge_experience]\nExperience: {}\nRule: {}\nEvidence:\n", seg.name, seg.steps);
    for (m, (v, node)) in &inv.peaks {
        user.push_str(&format!("- {m} peaked at {} [{node}]\n", fmt_value(*v)));
    }
    user.push_str("Does the evidence satisfy the rule?");
    user
}
