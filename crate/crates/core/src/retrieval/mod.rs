//! Tool and knowledge retrieval: BM25 over tool descriptions, cosine search
//! over embeddings, keyword-to-API mapping and the embedding-keyed response
//! cache.

mod bm25;
mod cache;
mod keywords;
mod vector;

/// Ordering key for scores. Values within rounding noise of each other map to
/// the same key, so tie rules are not overridden by the last ulp, and -0.0
/// ties with 0.0.
pub fn score_key(s: f64) -> i64 {
    (s * 1e12).round() as i64
}

pub use bm25::{bm25_score, rank_bm25, rank_tools_bm25, Bm25Params, CorpusStats};
pub use cache::{CacheEntry, CacheLookup, VectorCache, DEFAULT_CACHE_THRESHOLD};
pub use keywords::KeywordApiMap;
pub use vector::{cosine_similarity, rank_by_cosine, VectorRecord, VectorStore};

pub use crate::tools::{ArgSpec, ArgType, ToolRegistry, ToolSpec};

use crate::gateway::{EmbeddingVector, GatewayError, LanguageModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: query has {query}, record {id} has {record}")]
    DimensionMismatch { id: String, query: usize, record: usize },
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("keyword {keyword} maps to unknown tool {tool}")]
    UnresolvedTool { keyword: String, tool: String },
    #[error("dense retrieval selected but no dense encoder is configured")]
    NoDenseEncoder,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("vector store io: {0}")]
    Io(String),
}

/// Anything that turns text into an embedding. The model gateway is one; a
/// dedicated dense encoder would be another.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, text: &str) -> Result<EmbeddingVector, GatewayError>;
}

impl<T: LanguageModel + ?Sized> TextEncoder for T {
    fn encode(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        self.embed(text)
    }
}

struct ViaLlm<'a>(&'a dyn LanguageModel);

impl TextEncoder for ViaLlm<'_> {
    fn encode(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        self.0.embed(text)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    #[default]
    Bm25,
    LlmEmbedding,
    Dense,
}

/// Ranks tools for an anomaly description under the configured mode. The
/// two embedding modes share the cosine path and differ only in encoder.
pub fn rank_tools(
    mode: RetrievalMode,
    anomaly: &str,
    registry: &ToolRegistry,
    k: usize,
    llm: &dyn LanguageModel,
    dense: Option<&dyn TextEncoder>,
) -> Result<Vec<ToolSpec>, RetrievalError> {
    let via_llm = ViaLlm(llm);
    let encoder: &dyn TextEncoder = match mode {
        RetrievalMode::Bm25 => return Ok(rank_tools_bm25(anomaly, registry.specs(), Bm25Params::default(), k)),
        RetrievalMode::LlmEmbedding => &via_llm,
        RetrievalMode::Dense => dense.ok_or(RetrievalError::NoDenseEncoder)?,
    };
    let query = encoder.encode(anomaly)?;
    let records = registry
        .specs()
        .iter()
        .map(|s| {
            Ok(VectorRecord {
                id: s.name.clone(),
                vector: encoder.encode(&format!("{} {}", s.name, s.description))?,
                payload: String::new(),
            })
        })
        .collect::<Result<Vec<_>, GatewayError>>()?;
    // Cosine ties break by id; re-impose registry order for equal scores.
    let mut ranked = rank_by_cosine(&query, &records, records.len())?;
    let pos = |id: &str| registry.specs().iter().position(|s| s.name == id).unwrap_or(usize::MAX);
    ranked.sort_by(|a, b| score_key(b.1).cmp(&score_key(a.1)).then_with(|| pos(&a.0).cmp(&pos(&b.0))));
    Ok(ranked
        .into_iter()
        .take(k)
        .filter_map(|(id, _)| registry.get(&id).cloned())
        .collect())
}
