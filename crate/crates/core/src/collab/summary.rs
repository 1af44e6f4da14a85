//! Progressive chat summary: one goal line per tool record, bounded length.

use crate::gateway::{ask, GatewayError, LanguageModel};
use crate::transcript::ChatRecord;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub const DEFAULT_SUMMARY_CAP: usize = 2000;

const SUMMARY_SYSTEM: &str = "Condense one tool step into a single sentence stating which tool was used and what it revealed. \
Write in the first person and do not repeat earlier notes.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatSummary {
    pub lines: Vec<String>,
    /// Leading lines that compaction never removes.
    #[serde(default)]
    pub anchors: usize,
    /// Upper bound on `len()`.
    pub cap: usize,
}

impl Default for ChatSummary {
    fn default() -> Self {
        Self::new(DEFAULT_SUMMARY_CAP)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SummaryError {
    #[error("record {0} has no tool action to summarize")]
    NoToolAction(u64),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn marker_re() -> &'static regex::Regex {
    static R: OnceLock<regex::Regex> = OnceLock::new();
    R.get_or_init(|| regex::Regex::new(r"^- \[(\d+) earlier tool steps? compacted\]$").expect("valid regex"))
}

fn marker(n: usize) -> String {
    if n == 1 {
        "- [1 earlier tool step compacted]".into()
    } else {
        format!("- [{n} earlier tool steps compacted]")
    }
}

impl ChatSummary {
    pub fn new(cap: usize) -> Self {
        Self {
            lines: Vec::new(),
            anchors: 0,
            cap,
        }
    }

    /// Summary that starts from fixed lines which are never compacted.
    pub fn anchored(lines: Vec<String>, cap: usize) -> Self {
        let mut s = Self {
            anchors: lines.len(),
            lines,
            cap,
        };
        s.enforce_cap();
        s
    }

    /// Characters including one newline between lines.
    pub fn len(&self) -> usize {
        let chars: usize = self.lines.iter().map(|l| l.chars().count()).sum();
        chars + self.lines.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn text(&self) -> String {
        self.lines.join("\n")
    }

    /// Appends `line` and then restores the length bound.
    pub fn push_line(&mut self, line: String) {
        self.lines.push(line);
        self.enforce_cap();
    }

    fn enforce_cap(&mut self) {
        // Fold the oldest ordinary lines into a running marker, never
        // touching anchors or the newest line.
        while self.len() > self.cap {
            let first = self.anchors.min(self.lines.len());
            let (count, marker_at) = match self.lines.get(first).and_then(|l| marker_re().captures(l)) {
                Some(c) => (c[1].parse::<usize>().unwrap_or(0), Some(first)),
                None => (0, None),
            };
            let victim = marker_at.map_or(first, |m| m + 1);
            if victim + 1 >= self.lines.len() {
                break;
            }
            self.lines.remove(victim);
            match marker_at {
                Some(m) => self.lines[m] = marker(count + 1),
                None => self.lines.insert(first, marker(1)),
            }
        }
        if self.len() <= self.cap {
            return;
        }
        // Still too long: shorten lines from the newest backwards, keeping
        // earlier lines whole as long as possible.
        let mut budget = self.cap;
        let n = self.lines.len();
        let mut kept: Vec<String> = Vec::with_capacity(n);
        for (i, line) in self.lines.iter().enumerate() {
            let sep = usize::from(i > 0);
            let rest_min = n - 1 - i; // one separator per later line at least
            let avail = budget.saturating_sub(sep + rest_min);
            let t: String = line.chars().take(avail).collect();
            budget = budget.saturating_sub(sep + t.chars().count());
            kept.push(t);
        }
        while kept.len() > 1 && kept.last().is_some_and(String::is_empty) {
            kept.pop();
        }
        self.lines = kept;
        while self.len() > self.cap && !self.lines.is_empty() {
            self.lines.pop();
        }
        self.anchors = self.anchors.min(self.lines.len());
    }
}

/// Adds one goal line for `rec`, a tool step, to `current`. Earlier lines
/// stay as they are unless the cap forces compaction.
pub fn summarize_progressive(current: &ChatSummary, rec: &ChatRecord, gw: &dyn LanguageModel) -> Result<ChatSummary, SummaryError> {
    if !rec.has_tool_action() {
        return Err(SummaryError::NoToolAction(rec.seq));
    }
    let tool = rec.action.as_deref().unwrap_or_default().trim();
    let mut user = String::from("[task: summarize_record]\n[Current summary]\n");
    user.push_str(&current.text());
    user.push_str("\n\n[New record]\n");
    if let Some(t) = &rec.thought {
        user.push_str(&format!("Thought: {t}\n"));
    }
    user.push_str(&format!("Action: {tool}\n"));
    if let Some(i) = &rec.action_input {
        user.push_str(&format!("Action Input: {i}\n"));
    }
    if let Some(o) = &rec.observation {
        user.push_str(&format!("Observation: {o}\n"));
    }
    let reply = ask(gw, SUMMARY_SYSTEM, user)?;
    let sentence = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .trim_start_matches("- ")
        .trim()
        .to_string();
    let sentence = if sentence.is_empty() {
        format!("I used {tool}.")
    } else if !sentence.contains(tool) {
        format!("I used {tool}: {sentence}")
    } else {
        sentence
    };
    let mut next = current.clone();
    next.push_line(format!("- {sentence}"));
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compaction_keeps_anchor_and_newest() {
        let mut s = ChatSummary::anchored(vec!["- anchor".into()], 60);
        for i in 0..10 {
            s.push_line(format!("- line number {i}"));
            assert!(s.len() <= 60, "{:?}", s.lines);
        }
        assert_eq!(s.lines[0], "- anchor");
        assert_eq!(s.lines.last().unwrap(), "- line number 9");
        assert!(s.lines[1].contains("earlier tool steps compacted"));
    }

    #[test]
    fn tiny_cap_still_holds() {
        let mut s = ChatSummary::anchored(vec!["- a long anchor line".into()], 10);
        s.push_line("- another long line".into());
        assert!(s.len() <= 10);
    }
}
