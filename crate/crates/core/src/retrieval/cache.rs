//! Embedding-keyed response cache: a request close enough to one already
//! answered is served from the cache without a completion call.

use super::vector::cosine_similarity;
use super::RetrievalError;
use crate::gateway::{EmbeddingVector, LanguageModel};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

pub const DEFAULT_CACHE_THRESHOLD: f64 = 0.97;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key_vector: EmbeddingVector,
    pub request_text: String,
    pub response: String,
    #[serde(default)]
    pub hits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CacheLookup {
    Hit { response: String, similarity: f64 },
    Miss,
}

#[derive(Debug)]
pub struct VectorCache {
    entries: RwLock<Vec<CacheEntry>>,
    threshold: f64,
    hits: AtomicU64,
}

impl Default for VectorCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_THRESHOLD).expect("default threshold is valid")
    }
}

impl VectorCache {
    pub fn new(threshold: f64) -> Result<Self, RetrievalError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(RetrievalError::InvalidParams(format!("cache threshold {threshold} not in (0, 1]")));
        }
        Ok(Self {
            entries: RwLock::new(Vec::new()),
            threshold,
            hits: AtomicU64::new(0),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Total hits served.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Best entry at or above the threshold. Ties go to the older entry.
    pub fn lookup(&self, request: &str, gw: &dyn LanguageModel) -> Result<CacheLookup, RetrievalError> {
        if self.is_empty() {
            return Ok(CacheLookup::Miss);
        }
        let key = gw.embed(request)?;
        let mut entries = self.entries.write().expect("cache poisoned");
        let best = entries
            .iter()
            .enumerate()
            .filter_map(|(i, e)| cosine_similarity(&key, &e.key_vector).map(|s| (i, s)))
            .fold(None::<(usize, f64)>, |best, (i, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((i, s)),
            });
        match best {
            Some((i, s)) if s >= self.threshold => {
                entries[i].hits += 1;
                self.hits.fetch_add(1, Ordering::SeqCst);
                Ok(CacheLookup::Hit {
                    response: entries[i].response.clone(),
                    similarity: s,
                })
            }
            _ => Ok(CacheLookup::Miss),
        }
    }

    pub fn insert(&self, request: &str, response: &str, gw: &dyn LanguageModel) -> Result<(), RetrievalError> {
        let key_vector = gw.embed(request)?.normalized();
        self.entries.write().expect("cache poisoned").push(CacheEntry {
            key_vector,
            request_text: request.to_string(),
            response: response.to_string(),
            hits: 0,
        });
        Ok(())
    }

    /// Serve from cache, or compute with `answer` and remember the result.
    pub fn get_or_answer(
        &self,
        request: &str,
        gw: &dyn LanguageModel,
        answer: impl FnOnce() -> Result<String, RetrievalError>,
    ) -> Result<String, RetrievalError> {
        if let CacheLookup::Hit { response, .. } = self.lookup(request, gw)? {
            return Ok(response);
        }
        let response = answer()?;
        self.insert(request, &response, gw)?;
        Ok(response)
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.entries.read().expect("cache poisoned").clone()
    }
}
