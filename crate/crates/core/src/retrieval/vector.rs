//! Exact cosine search and a JSON-lines vector store.

use super::RetrievalError;
use crate::gateway::EmbeddingVector;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::RwLock;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub vector: EmbeddingVector,
    #[serde(default)]
    pub payload: String,
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dim() != b.dim() {
        return None;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let (na, nb) = (a.norm(), b.norm());
    Some(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) })
}

/// Exhaustive scan: (id, similarity) by similarity descending, ties by id.
pub fn rank_by_cosine(
    query: &EmbeddingVector,
    store: &[VectorRecord],
    k: usize,
) -> Result<Vec<(String, f64)>, RetrievalError> {
    let mut scored = Vec::with_capacity(store.len());
    for r in store {
        let s = cosine_similarity(query, &r.vector).ok_or_else(|| RetrievalError::DimensionMismatch {
            id: r.id.clone(),
            query: query.dim(),
            record: r.vector.dim(),
        })?;
        scored.push((r.id.clone(), s));
    }
    scored.sort_by(|a, b| super::score_key(b.1).cmp(&super::score_key(a.1)).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// In-memory store; concurrent readers, serialized writers.
#[derive(Debug, Default)]
pub struct VectorStore {
    records: RwLock<Vec<VectorRecord>>,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, rec: VectorRecord) -> Result<(), RetrievalError> {
        let mut g = self.records.write().expect("vector store poisoned");
        if let Some(first) = g.first() {
            if first.vector.dim() != rec.vector.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    id: rec.id,
                    query: first.vector.dim(),
                    record: rec.vector.dim(),
                });
            }
        }
        match g.iter_mut().find(|r| r.id == rec.id) {
            Some(existing) => *existing = rec,
            None => g.push(rec),
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("vector store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        rank_by_cosine(query, &self.records.read().expect("vector store poisoned"), k)
    }

    pub fn get(&self, id: &str) -> Option<VectorRecord> {
        self.records.read().expect("vector store poisoned").iter().find(|r| r.id == id).cloned()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, RetrievalError> {
        let io = |e: String| RetrievalError::Io(format!("{}: {e}", path.display()));
        let file = std::fs::File::open(path).map_err(|e| io(e.to_string()))?;
        let store = Self::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| io(format!("line {}: {e}", i + 1)))?;
            store.insert(rec)?;
        }
        Ok(store)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), RetrievalError> {
        let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", path.display()));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for r in self.records.read().expect("vector store poisoned").iter() {
            let line = serde_json::to_string(r).expect("record serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}
