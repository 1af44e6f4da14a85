//! Multi-agent diagnosis. A Chief DBA picks one specialist per round, the
//! specialist runs a short search within its metric scope and reports, the
//! report passes a selector before other agents can see it, and the Chief
//! decides whether to continue. Humans can drop notes in at any point.

pub mod summary;

pub use summary::{summarize_progressive, ChatSummary, SummaryError, DEFAULT_SUMMARY_CAP};

use crate::diagnosis::engine::{Investigation, Scope};
use crate::diagnosis::{bullet_summary, DiagnosisEngine, DiagnosisReport, EngineError, SearchParams, SearchStats, Termination};
use crate::gateway::{ask, GatewayError, LanguageModel};
use crate::knowledge::KnowledgeBase;
use crate::observability::AnomalyAlert;
use crate::tools::{MetricScope, ToolBox};
use crate::transcript::{ChatRecord, SessionLog};
use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub const CHIEF: &str = "ChiefDBA";

const SCHEDULE_SYSTEM: &str = "You coordinate a team of database specialists. Pick the one agent who should speak next and reply with the name only.";
const REPORT_SYSTEM: &str = "Report your findings to the team in a few sentences. Refer to the metrics and tools behind each claim.";
const REVIEW_SYSTEM: &str = "You lead the diagnosis. Reply CONCLUDE when the root causes are settled, ASK_HUMAN to request input from the on-call engineer, or CONTINUE otherwise, followed by a short reason.";
const CONSOLIDATE_SYSTEM: &str = "Merge the team's findings into a final diagnosis with root causes and solutions as bullet points.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentRole {
    pub name: String,
    pub charter: String,
    /// Globs over tool names; empty allows every tool.
    #[serde(default)]
    pub tool_filter: Vec<String>,
    /// Globs over metric names; empty allows every metric.
    #[serde(default)]
    pub metric_filter: Vec<String>,
    #[serde(default)]
    pub memory: ChatSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum CollabError {
    #[error("invalid agent {agent}: {reason}")]
    InvalidAgent { agent: String, reason: String },
    #[error("no {0} agent is registered")]
    MissingChief(&'static str),
    #[error("at least one specialist agent is required")]
    NoSpecialists,
    #[error("duplicate agent name {0}")]
    DuplicateAgent(String),
}

fn glob_set(patterns: &[String]) -> Result<GlobSet, globset::Error> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        b.add(Glob::new(p)?);
    }
    b.build()
}

impl AgentRole {
    pub fn new(name: &str, charter: &str, tool_filter: &[&str], metric_filter: &[&str]) -> Self {
        Self {
            name: name.into(),
            charter: charter.into(),
            tool_filter: tool_filter.iter().map(|s| s.to_string()).collect(),
            metric_filter: metric_filter.iter().map(|s| s.to_string()).collect(),
            memory: ChatSummary::default(),
        }
    }

    pub fn chief() -> Self {
        Self::new(
            CHIEF,
            "You schedule the specialists and merge their findings. If they find nothing, look at the application side: query templates, locks and workload shape.",
            &[],
            &["*"],
        )
    }

    pub fn cpu_agent() -> Self {
        Self::new(
            "CpuAgent",
            "You look into processor load: CPU usage, running processes, session counts and which templates dominate the load.",
            &[],
            &["cpu_*", "*_cpu_*", "node_procs_*", "active_sessions", "top_template_share"],
        )
    }

    pub fn memory_agent() -> Self {
        Self::new(
            "MemoryAgent",
            "You look into memory pressure: buffer usage, swapping and memory-hungry operations.",
            &[],
            &["memory_*", "*_mem_*", "swap_*"],
        )
    }

    pub fn builtin() -> Vec<Self> {
        vec![Self::chief(), Self::cpu_agent(), Self::memory_agent()]
    }

    pub fn is_chief(&self) -> bool {
        self.name == CHIEF
    }

    fn invalid(&self, e: impl std::fmt::Display) -> CollabError {
        CollabError::InvalidAgent {
            agent: self.name.clone(),
            reason: e.to_string(),
        }
    }

    pub fn metric_scope(&self) -> Result<Option<MetricScope>, CollabError> {
        if self.metric_filter.is_empty() {
            return Ok(None);
        }
        MetricScope::new(&self.metric_filter).map(Some).map_err(|e| self.invalid(e))
    }

    /// `tools` narrowed to what this agent may call.
    pub fn toolbox(&self, tools: &ToolBox) -> Result<ToolBox, CollabError> {
        if self.tool_filter.is_empty() {
            return Ok(tools.clone());
        }
        let set = glob_set(&self.tool_filter).map_err(|e| self.invalid(e))?;
        Ok(tools.restrict(|s| set.is_match(&s.name)))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Shared,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorPolicy {
    /// Analyses must point at something observed.
    #[default]
    ObservationGrounded,
    AcceptAll,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdaterPolicy {
    /// Each agent's memory is the progressive summary of its own tool steps.
    #[default]
    ProgressiveSummary,
    Disabled,
}

fn default_rounds() -> u32 {
    4
}
fn default_agent_nodes() -> u32 {
    3
}
fn default_cap() -> usize {
    DEFAULT_SUMMARY_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSettings {
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub selector: SelectorPolicy,
    #[serde(default)]
    pub updater: UpdaterPolicy,
    #[serde(default = "default_rounds")]
    pub max_rounds: u32,
    /// Expansion budget for one agent turn.
    #[serde(default = "default_agent_nodes")]
    pub agent_max_nodes: u32,
    #[serde(default = "default_cap")]
    pub summary_cap: usize,
    /// How long to wait when the Chief asks the human for input.
    #[serde(default)]
    pub feedback_wait_ms: u64,
}

impl Default for EnvironmentSettings {
    fn default() -> Self {
        Self {
            visibility: Visibility::Shared,
            selector: SelectorPolicy::ObservationGrounded,
            updater: UpdaterPolicy::ProgressiveSummary,
            max_rounds: default_rounds(),
            agent_max_nodes: default_agent_nodes(),
            summary_cap: default_cap(),
            feedback_wait_ms: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PostOutcome {
    Accepted(u64),
    Filtered(String),
}

/// What the selector checks an analysis against.
#[derive(Clone, Debug, Default)]
pub struct Grounding {
    pub metrics: Vec<String>,
    pub tools: Vec<String>,
    pub segments: Vec<String>,
}

impl Grounding {
    fn from(inv: &Investigation, tools: &ToolBox, kb: Option<&KnowledgeBase>) -> Self {
        Self {
            metrics: inv.peaks.keys().chain(inv.abnormal.keys()).cloned().collect(),
            tools: tools.registry().specs().iter().map(|s| s.name.clone()).collect(),
            segments: kb.map(|k| k.snapshot().into_iter().map(|s| s.name).collect()).unwrap_or_default(),
        }
    }

    pub fn grounds(&self, analysis: &str) -> bool {
        let a = analysis.to_lowercase();
        let spaced = |s: &str| s.replace('_', " ");
        a.contains("pg_stat_")
            || a.contains("prometheus")
            || self
                .metrics
                .iter()
                .chain(&self.tools)
                .chain(&self.segments)
                .any(|t| !t.is_empty() && (a.contains(&t.to_lowercase()) || a.contains(&spaced(&t.to_lowercase()))))
    }
}

/// Appends `rec` to the shared transcript if the selector accepts it.
/// Human notes always pass.
pub fn post_message(log: &SessionLog, rec: ChatRecord, env: &EnvironmentSettings, grounding: &Grounding) -> PostOutcome {
    let ok = rec.is_human()
        || match env.selector {
            SelectorPolicy::AcceptAll => true,
            SelectorPolicy::ObservationGrounded => grounding.grounds(&rec.analysis),
        };
    if ok {
        PostOutcome::Accepted(log.append(rec).seq)
    } else {
        PostOutcome::Filtered(rec.analysis)
    }
}

fn named_agent<'a>(reply: &str, names: &[&'a str]) -> Option<&'a str> {
    let tokens: Vec<&str> = reply
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .collect();
    tokens.iter().find_map(|t| names.iter().copied().find(|n| n == t))
}

/// Picks the next specialist. The Chief's reply must name a registered
/// agent; one re-prompt is allowed before falling back to round robin.
pub fn schedule_speaker(
    agents: &[AgentRole],
    round: u32,
    transcript: &[ChatRecord],
    gw: &dyn LanguageModel,
) -> Result<String, GatewayError> {
    let names: Vec<&str> = agents.iter().filter(|a| !a.is_chief()).map(|a| a.name.as_str()).collect();
    if names.len() == 1 {
        return Ok(names[0].to_string());
    }
    let mut user = format!("[task: schedule]\nRound {round}. Agents: {}\n", names.join(", "));
    if !transcript.is_empty() {
        user.push_str("Discussion so far:\n");
        for r in transcript {
            user.push_str(&format!("- {}: {}\n", r.speaker, crate::text::truncate_chars(&r.analysis, 300)));
        }
    }
    user.push_str("Who speaks next?");
    let first = ask(gw, SCHEDULE_SYSTEM, user)?;
    if let Some(n) = named_agent(&first, &names) {
        return Ok(n.to_string());
    }
    let retry = format!(
        "[task: schedule_retry]\n\"{}\" is not one of the agents. Choose exactly one of: {}",
        crate::text::truncate_chars(first.trim(), 80),
        names.join(", ")
    );
    let second = ask(gw, SCHEDULE_SYSTEM, retry)?;
    if let Some(n) = named_agent(&second, &names) {
        return Ok(n.to_string());
    }
    let idx = (round.max(1) as usize - 1) % names.len();
    Ok(names[idx].to_string())
}

/// Everything produced by a collaborative run, including what the selector
/// kept out of the shared transcript.
#[derive(Debug)]
pub struct CollabOutcome {
    pub report: DiagnosisReport,
    pub filtered: Vec<ChatRecord>,
    pub agents: Vec<AgentRole>,
}

#[derive(Debug)]
pub struct CollabAbort {
    pub error: EngineError,
    pub partial: DiagnosisReport,
}

impl std::fmt::Display for CollabAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "collaborative diagnosis aborted: {}", self.error)
    }
}

impl std::error::Error for CollabAbort {}

pub fn validate_agents(agents: &[AgentRole]) -> Result<(), CollabError> {
    let mut seen = std::collections::BTreeSet::new();
    for a in agents {
        if a.name.trim().is_empty() {
            return Err(a.invalid("empty name"));
        }
        if !seen.insert(a.name.as_str()) {
            return Err(CollabError::DuplicateAgent(a.name.clone()));
        }
        a.metric_scope()?;
        glob_set(&a.tool_filter).map_err(|e| a.invalid(e))?;
    }
    if !agents.iter().any(AgentRole::is_chief) {
        return Err(CollabError::MissingChief(CHIEF));
    }
    if agents.iter().all(AgentRole::is_chief) {
        return Err(CollabError::NoSpecialists);
    }
    Ok(())
}

struct Run<'e, 'a> {
    engine: &'e DiagnosisEngine<'a>,
    alert: &'e AnomalyAlert,
    log: &'e SessionLog,
    env: &'e EnvironmentSettings,
    inv: Investigation,
    notes: Vec<String>,
    filtered: Vec<ChatRecord>,
    simulations: u64,
    nodes: u64,
}

impl Run<'_, '_> {
    fn grounding(&self) -> Grounding {
        Grounding::from(&self.inv, &self.engine.tools, self.engine.kb)
    }

    fn take_feedback(&mut self, fb: Vec<String>) {
        self.notes.extend(fb.into_iter().map(|f| format!("Human feedback: {f}")));
    }

    /// One bounded search by `agent`; returns the tool steps it took.
    fn agent_turn(&mut self, agent: &mut AgentRole, round: Option<u32>) -> Result<Vec<ChatRecord>, EngineError> {
        let scope_metrics = agent.metric_scope().map_err(|e| EngineError::Config(e.to_string()))?;
        let tools = agent.toolbox(&self.engine.tools).map_err(|e| EngineError::Config(e.to_string()))?;
        let sub = DiagnosisEngine {
            gw: self.engine.gw,
            tools,
            kb: self.engine.kb,
            config: self.engine.config.clone(),
        };
        let memory = agent.memory.lines.clone();
        let budget = self.env.agent_max_nodes.max(1);
        let scope = Scope {
            speaker: &agent.name,
            node_prefix: match round {
                Some(r) => format!("{}@{}", agent.name, r),
                None => format!("{}@final", agent.name),
            },
            charter: Some(&agent.charter),
            memory: &memory,
            metric_scope: scope_metrics.as_ref(),
            shared: self.log.records(),
            params: SearchParams {
                max_nodes: budget,
                no_progress_limit: budget,
                ..self.engine.config.params.clone()
            },
            record_steps: false,
            round,
        };
        let outcome = sub.search(self.alert, self.log, &scope, &mut self.inv)?;
        self.simulations += outcome.tree.big_n;
        self.nodes += outcome.tree.expansions();
        self.take_feedback(outcome.feedback);
        if self.env.updater == UpdaterPolicy::ProgressiveSummary {
            for rec in &outcome.successful_steps {
                agent.memory = summarize_progressive(&agent.memory, rec, self.engine.gw).map_err(|e| match e {
                    SummaryError::Gateway(g) => EngineError::Gateway(g),
                    other => EngineError::Config(other.to_string()),
                })?;
            }
        }
        Ok(outcome.successful_steps)
    }

    fn agent_report(&self, agent: &AgentRole, steps: &[ChatRecord], round: u32) -> Result<ChatRecord, GatewayError> {
        let mine: Vec<&str> = self
            .inv
            .causes
            .iter()
            .filter(|c| c.reported_by.as_deref() == Some(agent.name.as_str()))
            .map(|c| c.cause_id.as_str())
            .collect();
        let mut user = format!("[task: agent_report]\nAgent: {}\nRound: {round}\nSteps:\n", agent.name);
        if steps.is_empty() {
            user.push_str("- no successful tool step\n");
        }
        for s in steps {
            user.push_str(&format!(
                "- {} {} -> {}\n",
                s.action.as_deref().unwrap_or(""),
                s.action_input.as_deref().unwrap_or(""),
                crate::text::truncate_chars(s.observation.as_deref().unwrap_or(""), 300)
            ));
        }
        user.push_str(&format!(
            "Confirmed root causes: {}\n",
            if mine.is_empty() { "none".to_string() } else { mine.join(", ") }
        ));
        let analysis = ask(self.engine.gw, REPORT_SYSTEM, user)?;
        let last = steps.last();
        Ok(ChatRecord {
            speaker: agent.name.clone(),
            thought: last.and_then(|s| s.thought.clone()),
            action: last.and_then(|s| s.action.clone()),
            action_input: last.and_then(|s| s.action_input.clone()),
            observation: last.and_then(|s| s.observation.clone()),
            analysis,
            round: Some(round),
            ..Default::default()
        })
    }

    fn post(&mut self, rec: ChatRecord) -> PostOutcome {
        let g = self.grounding();
        let out = post_message(self.log, rec.clone(), self.env, &g);
        if let PostOutcome::Filtered(_) = out {
            self.notes.push(format!("Filtered an ungrounded analysis from {}.", rec.speaker));
            self.filtered.push(rec);
        }
        out
    }

    fn report(&self, analysis: String, termination: Termination) -> DiagnosisReport {
        DiagnosisReport {
            alert: self.alert.clone(),
            causes: self.inv.causes.clone(),
            bullet_summary: bullet_summary(&self.inv.causes),
            analysis,
            transcript: self.log.records(),
            notes: self.notes.clone(),
            stats: SearchStats {
                simulations: self.simulations,
                nodes: self.nodes,
                termination,
            },
        }
    }
}

/// Runs rounds until the Chief concludes or `max_rounds` is reached, then
/// consolidates. The report's causes are the union of every agent's.
pub fn run_collaborative(
    alert: &AnomalyAlert,
    mut agents: Vec<AgentRole>,
    env: &EnvironmentSettings,
    engine: &DiagnosisEngine<'_>,
    log: &SessionLog,
) -> Result<CollabOutcome, CollabAbort> {
    let mut run = Run {
        engine,
        alert,
        log,
        env,
        inv: Investigation::default(),
        notes: Vec::new(),
        filtered: Vec::new(),
        simulations: 0,
        nodes: 0,
    };
    if let Err(e) = validate_agents(&agents) {
        return Err(CollabAbort {
            error: EngineError::Config(e.to_string()),
            partial: run.report(String::new(), Termination::MaxRounds),
        });
    }
    for a in agents.iter_mut() {
        if a.memory.lines.is_empty() {
            a.memory = ChatSummary::anchored(
                vec![format!("- I know the anomaly ran from {} to {}.", alert.start_time, alert.end_time)],
                env.summary_cap,
            );
        }
    }
    match rounds(&mut run, &mut agents) {
        Ok(analysis) => {
            let termination = analysis.1;
            let report = run.report(analysis.0, termination);
            Ok(CollabOutcome {
                report,
                filtered: run.filtered,
                agents,
            })
        }
        Err(error) => Err(CollabAbort {
            error,
            partial: run.report(String::new(), Termination::MaxRounds),
        }),
    }
}

fn rounds(run: &mut Run<'_, '_>, agents: &mut [AgentRole]) -> Result<(String, Termination), EngineError> {
    let gw = run.engine.gw;
    let mut termination = Termination::MaxRounds;
    for round in 1..=run.env.max_rounds {
        let fb = run.log.drain_feedback();
        run.take_feedback(fb);
        let speaker = schedule_speaker(agents, round, &run.log.records(), gw)?;
        let idx = agents.iter().position(|a| a.name == speaker).expect("scheduler returns a registered name");
        let mut agent = agents[idx].clone();
        let steps = run.agent_turn(&mut agent, Some(round))?;
        let rec = run.agent_report(&agent, &steps, round)?;
        agents[idx] = agent;
        let posted = run.post(rec.clone());
        let mut user = format!("[task: chief_review]\nRound {round} of {}.\n", run.env.max_rounds);
        match posted {
            PostOutcome::Accepted(_) => user.push_str(&format!("{} reported: {}\n", rec.speaker, rec.analysis)),
            PostOutcome::Filtered(_) => user.push_str(&format!("{} reported nothing usable.\n", rec.speaker)),
        }
        user.push_str(&format!(
            "Confirmed root causes: {}\n",
            if run.inv.causes.is_empty() {
                "none".to_string()
            } else {
                run.inv.causes.iter().map(|c| c.cause_id.as_str()).collect::<Vec<_>>().join(", ")
            }
        ));
        let verdict = ask(gw, REVIEW_SYSTEM, user)?;
        if verdict.contains("ASK_HUMAN") {
            let question = verdict.replace("ASK_HUMAN", "").trim().to_string();
            run.log.append(ChatRecord {
                round: Some(round),
                ..ChatRecord::analysis(CHIEF, if question.is_empty() { "Waiting for input from the on-call engineer.".into() } else { question })
            });
            let fb = run.log.wait_for_feedback(Duration::from_millis(run.env.feedback_wait_ms));
            run.take_feedback(fb);
        } else if verdict.trim_start().starts_with("CONCLUDE") {
            termination = Termination::Concluded;
            break;
        }
    }

    let specialists_found = run.inv.causes.iter().any(|c| c.reported_by.as_deref() != Some(CHIEF));
    if !specialists_found {
        if let Some(ci) = agents.iter().position(AgentRole::is_chief) {
            let line = "The specialists found no root cause, so I am checking the application side next: query templates, lock waits and the workload mix.";
            run.log.append(ChatRecord::analysis(CHIEF, line));
            let mut chief = agents[ci].clone();
            let steps = run.agent_turn(&mut chief, None)?;
            agents[ci] = chief;
            if let Some(last) = steps.last() {
                let found: Vec<&str> = run
                    .inv
                    .causes
                    .iter()
                    .filter(|c| c.reported_by.as_deref() == Some(CHIEF))
                    .map(|c| c.cause_id.as_str())
                    .collect();
                run.log.append(ChatRecord {
                    thought: last.thought.clone(),
                    action: last.action.clone(),
                    action_input: last.action_input.clone(),
                    observation: last.observation.clone(),
                    ..ChatRecord::analysis(
                        CHIEF,
                        if found.is_empty() {
                            "The application-side check confirmed no further root cause.".to_string()
                        } else {
                            format!("The application-side check confirmed {}.", found.join(", "))
                        },
                    )
                });
            }
        }
    }

    let mut user = String::from("[task: consolidate]\nFindings:\n");
    for r in run.log.records() {
        user.push_str(&format!("- {}: {}\n", r.speaker, crate::text::truncate_chars(&r.analysis, 300)));
    }
    user.push_str("Root causes:\n");
    for c in &run.inv.causes {
        user.push_str(&format!(
            "- {} (from {}): {}\n",
            c.cause_id,
            c.reported_by.as_deref().unwrap_or("?"),
            c.solutions.join(" ")
        ));
    }
    let analysis = ask(gw, CONSOLIDATE_SYSTEM, user)?;
    run.log.append(ChatRecord::analysis(CHIEF, analysis.clone()));
    let fb = run.log.drain_feedback();
    run.take_feedback(fb);
    Ok((analysis, termination))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_agent_needs_whole_token() {
        let names = ["CpuAgent", "MemoryAgent"];
        assert_eq!(named_agent("Next: MemoryAgent.", &names), Some("MemoryAgent"));
        assert_eq!(named_agent("CpuAgents", &names), None);
    }

    #[test]
    fn builtin_roles_validate() {
        validate_agents(&AgentRole::builtin()).unwrap();
        assert!(matches!(validate_agents(&[AgentRole::cpu_agent()]), Err(CollabError::MissingChief(_))));
        assert!(matches!(validate_agents(&[AgentRole::chief()]), Err(CollabError::NoSpecialists)));
    }

    #[test]
    fn cpu_scope() {
        let s = AgentRole::cpu_agent().metric_scope().unwrap().unwrap();
        assert!(s.allows("cpu_usage") && s.allows("node_procs_running") && !s.allows("memory_usage"));
    }
}
