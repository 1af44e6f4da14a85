//! Okapi BM25 with +1-smoothed IDF.

use super::RetrievalError;
use crate::text::tokenize;
use crate::tools::ToolSpec;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, RetrievalError> {
        if !(k1 > 0.0) || !(0.0..=1.0).contains(&b) {
            return Err(RetrievalError::InvalidParams(format!("k1={k1}, b={b}")));
        }
        Ok(Self { k1, b })
    }
}

/// Document count, per-term document frequency and mean document length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub df: HashMap<String, usize>,
    pub avgdl: f64,
}

impl CorpusStats {
    pub fn from_documents<S: AsRef<str>>(docs: &[Vec<S>]) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for d in docs {
            total += d.len();
            let uniq: HashSet<&str> = d.iter().map(AsRef::as_ref).collect();
            for t in uniq {
                *df.entry(t.to_string()).or_default() += 1;
            }
        }
        let avgdl = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Self { n_docs: docs.len(), df, avgdl }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Each distinct query term counts once, in first-occurrence order.
pub fn bm25_score<S: AsRef<str>, T: AsRef<str>>(query: &[S], doc: &[T], stats: &CorpusStats, p: Bm25Params) -> f64 {
    let mut tf: HashMap<&str, usize> = HashMap::new();
    for t in doc {
        *tf.entry(t.as_ref()).or_default() += 1;
    }
    let dl = doc.len() as f64;
    let norm = if stats.avgdl > 0.0 { dl / stats.avgdl } else { 1.0 };
    let mut seen = HashSet::new();
    let mut score = 0.0;
    for q in query {
        let q = q.as_ref();
        if !seen.insert(q) {
            continue;
        }
        let Some(&f) = tf.get(q) else { continue };
        let f = f as f64;
        score += stats.idf(q) * (f * (p.k1 + 1.0)) / (f + p.k1 * (1.0 - p.b + p.b * norm));
    }
    score
}

/// (doc index, score) sorted by score descending; ties keep input order.
pub fn rank_bm25<S: AsRef<str>>(query: &[S], docs: &[Vec<String>], p: Bm25Params) -> Vec<(usize, f64)> {
    let stats = CorpusStats::from_documents(docs);
    let mut scored: Vec<(usize, f64)> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| (i, bm25_score(query, d, &stats, p)))
        .collect();
    scored.sort_by_key(|s| std::cmp::Reverse(super::score_key(s.1)));
    scored
}

/// Top-k tools for an anomaly description, scored over name + description.
pub fn rank_tools_bm25(anomaly: &str, registry: &[ToolSpec], p: Bm25Params, k: usize) -> Vec<ToolSpec> {
    let docs: Vec<Vec<String>> = registry
        .iter()
        .map(|s| tokenize(&format!("{} {}", s.name, s.description)))
        .collect();
    rank_bm25(&tokenize(anomaly), &docs, p)
        .into_iter()
        .take(k)
        .map(|(i, _)| registry[i].clone())
        .collect()
}
