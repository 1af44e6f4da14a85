//! Rule-driven backend for offline runs.

use super::embedding::{hashed_embedding, DEFAULT_SEED};
use super::{ChatMessage, CompletionRequest, EmbeddingVector, GatewayError, Role};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Mutex;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    #[default]
    Substring,
    Regex,
}

/// One canned reply. `max_uses` of `None` means unlimited.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub match_kind: MatchKind,
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ScriptRule {
    pub fn new(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            match_kind: MatchKind::Substring,
            reply: reply.into(),
            max_uses: None,
        }
    }

    pub fn regex(pattern: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            match_kind: MatchKind::Regex,
            ..Self::new(pattern, reply)
        }
    }

    pub fn once(mut self) -> Self {
        self.max_uses = Some(1);
        self
    }
}

enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

pub struct ScriptedBackend {
    rules: Vec<(Matcher, ScriptRule)>,
    uses: Mutex<Vec<u32>>,
    embed_dim: usize,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, embed_dim: usize) -> Result<Self, GatewayError> {
        let mut compiled = Vec::with_capacity(rules.len());
        for r in rules {
            let m = match r.match_kind {
                MatchKind::Substring => Matcher::Substring(r.pattern.clone()),
                MatchKind::Regex => Matcher::Regex(Regex::new(&r.pattern).map_err(|e| {
                    GatewayError::Script {
                        path: "<inline>".into(),
                        reason: format!("bad regex {:?}: {e}", r.pattern),
                    }
                })?),
            };
            compiled.push((m, r));
        }
        let n = compiled.len();
        Ok(Self {
            rules: compiled,
            uses: Mutex::new(vec![0; n]),
            embed_dim,
            seed: DEFAULT_SEED,
        })
    }

    pub fn load(path: &Path, embed_dim: usize) -> Result<Self, GatewayError> {
        let err = |reason: String| GatewayError::Script {
            path: path.display().to_string(),
            reason,
        };
        let raw = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let rules: Vec<ScriptRule> = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
        Self::new(rules, embed_dim).map_err(|e| match e {
            GatewayError::Script { reason, .. } => err(reason),
            other => other,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        let prompt = req
            .latest_prompt()
            .ok_or_else(|| GatewayError::InvalidRequest("no user or tool message to match".into()))?;
        let mut uses = self.uses.lock().expect("script counters poisoned");
        for (i, (m, rule)) in self.rules.iter().enumerate() {
            if rule.max_uses.is_some_and(|max| uses[i] >= max) {
                continue;
            }
            if m.is_match(prompt) {
                uses[i] += 1;
                return Ok(ChatMessage::new(Role::Assistant, rule.reply.clone()));
            }
        }
        Err(GatewayError::NoMatchingRule {
            excerpt: crate::text::truncate_chars(prompt, 160).to_string(),
        })
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        hashed_embedding(text, self.embed_dim, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::prompt("sys", text)
    }

    #[test]
    fn first_matching_rule_wins() {
        let b = ScriptedBackend::new(
            vec![
                ScriptRule::new("cpu_usage", "Action: is_abnormal_metric"),
                ScriptRule::new("cpu", "other"),
            ],
            8,
        )
        .unwrap();
        assert_eq!(b.complete(&req("check cpu_usage")).unwrap().content, "Action: is_abnormal_metric");
        assert_eq!(b.complete(&req("cpu only")).unwrap().content, "other");
    }

    #[test]
    fn exhausted_rules_are_skipped_then_error() {
        let b = ScriptedBackend::new(vec![ScriptRule::new("x", "one").once()], 8).unwrap();
        assert_eq!(b.complete(&req("x")).unwrap().content, "one");
        assert!(matches!(b.complete(&req("x")), Err(GatewayError::NoMatchingRule { .. })));
    }

    #[test]
    fn empty_script_never_fabricates() {
        let b = ScriptedBackend::new(vec![], 8).unwrap();
        assert!(matches!(b.complete(&req("anything")), Err(GatewayError::NoMatchingRule { .. })));
    }

    #[test]
    fn regex_rules_and_system_text_is_ignored() {
        let b = ScriptedBackend::new(vec![ScriptRule::regex(r"Agent: (Cpu|Memory)Agent", "ok")], 8).unwrap();
        assert_eq!(b.complete(&req("Agent: MemoryAgent")).unwrap().content, "ok");
        let only_system = CompletionRequest::new(vec![super::super::ChatMessage::system("Agent: CpuAgent")]);
        assert!(b.complete(&only_system).is_err());
    }

    #[test]
    fn bad_regex_is_a_script_error() {
        assert!(matches!(
            ScriptedBackend::new(vec![ScriptRule::regex("(", "x")], 8),
            Err(GatewayError::Script { .. })
        ));
    }
}
