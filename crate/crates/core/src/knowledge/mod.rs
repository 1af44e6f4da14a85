//! Maintenance documents → experience segments.
//!
//! A document is cut into chunks at section headings, each chunk gets a short
//! summary that serves as its index, and the model extracts four-field
//! experience segments from a chunk read together with the summaries of its
//! most similar neighbours.

mod chunking;
mod extraction;

pub use chunking::{segment_document, Segmenter, SegmenterConfig};
pub use extraction::{
    extract_experience, ingest_document, parse_experience_reply, summarize_chunk, Extraction, IngestOptions,
    IngestReport, RejectedSegment,
};

use crate::gateway::GatewayError;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("max_chunk_tokens must be at least 8, got {0}")]
    ChunkSizeTooSmall(usize),
    #[error("bad section separator {pattern:?}: {reason}")]
    BadSeparator { pattern: String, reason: String },
    #[error("chunk {0} is empty")]
    EmptyChunk(String),
    #[error("model returned an empty summary for chunk {0}")]
    EmptySummary(String),
    #[error("cannot parse experience reply: {0}")]
    Unparseable(String),
    #[error("experience segment {name:?} rejected: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidSegment { name: String, violations: Vec<Violation> },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("knowledge base io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub chunk_id: String,
    pub section_path: Vec<String>,
    pub text: String,
    pub token_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkSummary {
    pub chunk_id: String,
    pub summary: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Describes one root cause and how to confirm it.
    #[default]
    RootCause,
    /// General diagnosis procedure; shown to the model, never matched as a
    /// cause.
    Procedure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceSegment {
    pub name: String,
    pub content: String,
    pub metrics: Vec<String>,
    pub steps: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_chunks: Vec<String>,
    /// Remedies. When empty, the suggestion sentences of `steps` are used.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub solutions: Vec<String>,
    #[serde(default)]
    pub kind: SegmentKind,
}

impl ExperienceSegment {
    /// Upper-cased name, the identifier reports use.
    pub fn cause_id(&self) -> String {
        self.name.to_uppercase()
    }

    pub fn effective_solutions(&self) -> Vec<String> {
        if !self.solutions.is_empty() {
            return self.solutions.clone();
        }
        self.steps
            .split_inclusive(['.', '!', '?'])
            .map(str::trim)
            .filter(|s| {
                let l = s.to_lowercase();
                l.contains("suggest") || l.contains("recommend")
            })
            .map(str::to_string)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingField(String),
    EmptyField(String),
    DuplicateMetric(String),
    InvalidName(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MissingField(x) => write!(f, "missing field: {x}"),
            Violation::EmptyField(x) => write!(f, "empty field: {x}"),
            Violation::DuplicateMetric(x) => write!(f, "duplicate metric: {x}"),
            Violation::InvalidName(x) => write!(f, "invalid name: {x}"),
        }
    }
}

pub fn validate_segment(seg: &ExperienceSegment) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    for (field, value) in [("name", &seg.name), ("content", &seg.content), ("steps", &seg.steps)] {
        if value.trim().is_empty() {
            v.push(Violation::EmptyField(field.into()));
        }
    }
    if !seg.name.trim().is_empty() && seg.name.chars().any(char::is_whitespace) {
        v.push(Violation::InvalidName(seg.name.clone()));
    }
    if seg.metrics.is_empty() {
        v.push(Violation::EmptyField("metrics".into()));
    }
    let mut seen = BTreeSet::new();
    for m in &seg.metrics {
        if m.trim().is_empty() {
            v.push(Violation::EmptyField("metrics".into()));
        } else if !seen.insert(m.as_str()) {
            v.push(Violation::DuplicateMetric(m.clone()));
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Default, Serialize, Deserialize)]
struct KbFile {
    #[serde(default)]
    segments: Vec<ExperienceSegment>,
    #[serde(default)]
    summaries: Vec<ChunkSummary>,
}

#[derive(Default)]
struct KbInner {
    segments: BTreeMap<String, ExperienceSegment>,
    summaries: Vec<ChunkSummary>,
}

/// Append-only experience store. Inserting a name that exists is a no-op, so
/// re-ingesting a document never duplicates. Reads count as lookups.
#[derive(Default)]
pub struct KnowledgeBase {
    inner: RwLock<KbInner>,
    lookups: AtomicU64,
}

impl std::fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase").field("segments", &self.len()).finish()
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_segments(segments: impl IntoIterator<Item = ExperienceSegment>) -> Self {
        let kb = Self::new();
        for s in segments {
            kb.insert(s);
        }
        kb
    }

    /// True if the segment was added.
    pub fn insert(&self, seg: ExperienceSegment) -> bool {
        let mut g = self.inner.write().expect("kb poisoned");
        if g.segments.contains_key(&seg.name) {
            return false;
        }
        g.segments.insert(seg.name.clone(), seg);
        true
    }

    pub fn add_summary(&self, s: ChunkSummary) {
        let mut g = self.inner.write().expect("kb poisoned");
        if !g.summaries.iter().any(|x| x.chunk_id == s.chunk_id && x.summary == s.summary) {
            g.summaries.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("kb poisoned").segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of read accesses made through the lookup methods.
    pub fn lookups(&self) -> u64 {
        self.lookups.load(Ordering::SeqCst)
    }

    fn touch(&self) {
        self.lookups.fetch_add(1, Ordering::SeqCst);
    }

    pub fn get(&self, name: &str) -> Option<ExperienceSegment> {
        self.touch();
        self.inner.read().expect("kb poisoned").segments.get(name).cloned()
    }

    /// All segments in name order.
    pub fn segments(&self) -> Vec<ExperienceSegment> {
        self.touch();
        self.inner.read().expect("kb poisoned").segments.values().cloned().collect()
    }

    /// Snapshot for listing without counting as a diagnosis lookup.
    pub fn snapshot(&self) -> Vec<ExperienceSegment> {
        self.inner.read().expect("kb poisoned").segments.values().cloned().collect()
    }

    pub fn summaries(&self) -> Vec<ChunkSummary> {
        self.inner.read().expect("kb poisoned").summaries.clone()
    }

    /// Root-cause segments whose metrics intersect `abnormal`, in name order.
    pub fn segments_for_metrics(&self, abnormal: &BTreeSet<String>) -> Vec<ExperienceSegment> {
        self.segments()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::RootCause && s.metrics.iter().any(|m| abnormal.contains(m)))
            .collect()
    }

    pub fn procedures(&self) -> Vec<ExperienceSegment> {
        self.segments()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::Procedure)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let raw = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
        let file: KbFile =
            serde_json::from_str(&raw).map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))?;
        let kb = Self::new();
        for seg in file.segments {
            if let Err(violations) = validate_segment(&seg) {
                return Err(KnowledgeError::InvalidSegment { name: seg.name, violations });
            }
            kb.insert(seg);
        }
        for s in file.summaries {
            kb.add_summary(s);
        }
        Ok(kb)
    }

    /// Loads `path` if it exists, otherwise starts empty.
    pub fn load_or_default(path: &Path) -> Result<Self, KnowledgeError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), KnowledgeError> {
        let g = self.inner.read().expect("kb poisoned");
        let file = KbFile {
            segments: g.segments.values().cloned().collect(),
            summaries: g.summaries.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("kb serializes");
        std::fs::write(path, text + "\n").map_err(|e| KnowledgeError::Io(format!("{}: {e}", path.display())))
    }
}
