//! Diagnosis report and its markdown rendering.

use crate::observability::AnomalyAlert;
use crate::transcript::ChatRecord;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootCause {
    pub cause_id: String,
    pub evidence: String,
    /// References to the observation nodes the evidence rests on, written as
    /// `<speaker>#<node>`.
    pub evidence_nodes: Vec<String>,
    #[serde(default)]
    pub matched_experience: Option<String>,
    #[serde(default)]
    pub solutions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_by: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoProgress,
    MaxNodes,
    NoExpandableNodes,
    /// The model said nothing was left to check.
    Concluded,
    MaxRounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub simulations: u64,
    pub nodes: u64,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub alert: AnomalyAlert,
    pub causes: Vec<RootCause>,
    pub bullet_summary: String,
    #[serde(default)]
    pub analysis: String,
    pub transcript: Vec<ChatRecord>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub stats: SearchStats,
}

impl DiagnosisReport {
    pub fn cause_ids(&self) -> Vec<String> {
        self.causes.iter().map(|c| c.cause_id.clone()).collect()
    }

    pub fn has_cause(&self, id: &str) -> bool {
        self.causes.iter().any(|c| c.cause_id.eq_ignore_ascii_case(id))
    }
}

/// One bullet per cause with its solutions nested under it.
pub fn bullet_summary(causes: &[RootCause]) -> String {
    if causes.is_empty() {
        return "- No root cause identified.".into();
    }
    let mut out = String::new();
    for c in causes {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("- {}: {}", c.cause_id, c.evidence));
        if c.solutions.is_empty() {
            out.push_str("\n  - No solution on record.");
        }
        for s in &c.solutions {
            out.push_str(&format!("\n  - {s}"));
        }
    }
    out
}

pub fn render_markdown(r: &DiagnosisReport) -> String {
    let mut out = format!(
        "# Diagnosis for {}\n\n{} (window {} to {})\n\n## Root causes\n\n{}\n",
        r.alert.alert_id,
        r.alert.description,
        r.alert.start_time,
        r.alert.end_time,
        bullet_summary(&r.causes)
    );
    if !r.analysis.trim().is_empty() {
        out.push_str(&format!("\n## Analysis\n\n{}\n", r.analysis.trim()));
    }
    if !r.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &r.notes {
            out.push_str(&format!("- {n}\n"));
        }
    }
    out
}
