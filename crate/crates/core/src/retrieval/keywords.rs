//! Keyword → tool mapping for request pre-processing.
//!
//! Keys and requests are compared as stemmed token sequences after synonym
//! substitution, so "examine cpu" reaches a key "analyze cpu" when examine is
//! configured as a synonym of analyze.

use super::RetrievalError;
use crate::text::{stem, tokenize};
use crate::tools::ToolRegistry;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordApiMap {
    pub entries: IndexMap<String, Vec<String>>,
    /// Word → canonical word.
    #[serde(default)]
    pub synonyms: IndexMap<String, String>,
}

impl KeywordApiMap {
    fn normalize(&self, text: &str) -> Vec<String> {
        let syn: Vec<(String, String)> = self
            .synonyms
            .iter()
            .map(|(k, v)| (stem(&k.to_lowercase()), stem(&v.to_lowercase())))
            .collect();
        tokenize(text)
            .iter()
            .map(|t| {
                let s = stem(t);
                syn.iter().find(|(from, _)| *from == s).map(|(_, to)| to.clone()).unwrap_or(s)
            })
            .collect()
    }

    /// Tools whose keyword occurs in the request, deduplicated, in map order.
    pub fn map_keywords(&self, request: &str) -> Vec<String> {
        let req = self.normalize(request);
        let mut out: Vec<String> = Vec::new();
        for (key, tools) in &self.entries {
            let k = self.normalize(key);
            if k.is_empty() || !req.windows(k.len()).any(|w| w == k.as_slice()) {
                continue;
            }
            for t in tools {
                if !out.contains(t) {
                    out.push(t.clone());
                }
            }
        }
        out
    }

    /// Like `map_keywords` but every tool must exist in `registry`.
    pub fn resolve(&self, request: &str, registry: &ToolRegistry) -> Result<Vec<String>, RetrievalError> {
        let tools = self.map_keywords(request);
        for t in &tools {
            if registry.get(t).is_none() {
                let keyword = self
                    .entries
                    .iter()
                    .find(|(_, v)| v.contains(t))
                    .map(|(k, _)| k.clone())
                    .unwrap_or_default();
                return Err(RetrievalError::UnresolvedTool { keyword, tool: t.clone() });
            }
        }
        Ok(tools)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> KeywordApiMap {
        let mut m = KeywordApiMap::default();
        m.entries.insert("analyze cpu".into(), vec!["cpu_usage_tool".into()]);
        m.entries.insert("cpu usage".into(), vec!["cpu_usage_tool".into(), "scan".into()]);
        m.synonyms.insert("examine".into(), "analyze".into());
        m.synonyms.insert("examination".into(), "analysis".into());
        m
    }

    #[test]
    fn synonym_reaches_key() {
        assert_eq!(map().map_keywords("examine cpu"), vec!["cpu_usage_tool"]);
        assert_eq!(map().map_keywords("Examining CPU now"), vec!["cpu_usage_tool"]);
    }

    #[test]
    fn no_overlap_is_empty() {
        assert!(map().map_keywords("disk full").is_empty());
    }

    #[test]
    fn dedup_in_map_order() {
        assert_eq!(map().map_keywords("analyze cpu usage"), vec!["cpu_usage_tool", "scan"]);
    }

    #[test]
    fn unresolved_tool_is_an_error() {
        let reg = ToolRegistry::new(vec![]).unwrap();
        assert!(matches!(
            map().resolve("analyze cpu", &reg),
            Err(RetrievalError::UnresolvedTool { tool, .. }) if tool == "cpu_usage_tool"
        ));
    }
}
