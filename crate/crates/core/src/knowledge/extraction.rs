//! Chunk summaries and experience extraction through the model.

use super::{
    validate_segment, ChunkSummary, DocumentChunk, ExperienceSegment, KnowledgeBase, KnowledgeError, SegmentKind,
    Segmenter, SegmenterConfig, Violation,
};
use crate::gateway::{ask, EmbeddingVector, LanguageModel};
use crate::retrieval::{rank_by_cosine, VectorRecord};
use serde_json::{Map, Value};

pub(crate) const SUMMARIZE_SYSTEM: &str = "You index database maintenance documentation. \
Write a short summary of the chunk you are given. Other readers will search these summaries \
to locate technical details, so keep metric names, view names, thresholds and worked examples.";

pub(crate) const EXTRACT_SYSTEM: &str = "You turn database maintenance documentation into \
reusable diagnosis experience. Each experience is a JSON object with exactly these fields: \
\"name\" (snake_case identifier of the root cause), \"content\" (how the cause hurts performance), \
\"metrics\" (list of metric names that hint at it) and \"steps\" (how to check for it against the \
database, with concrete thresholds). Reply with a JSON array, or with \"no experience found\".";

pub fn summarize_chunk(chunk: &DocumentChunk, gw: &dyn LanguageModel) -> Result<ChunkSummary, KnowledgeError> {
    if chunk.text.trim().is_empty() {
        return Err(KnowledgeError::EmptyChunk(chunk.chunk_id.clone()));
    }
    let prompt = format!(
        "[task: summarize_chunk]\nChunk {} (section: {}):\n{}",
        chunk.chunk_id,
        chunk.section_path.join(" > "),
        chunk.text
    );
    let summary = ask(gw, SUMMARIZE_SYSTEM, prompt)?.trim().to_string();
    if summary.is_empty() {
        return Err(KnowledgeError::EmptySummary(chunk.chunk_id.clone()));
    }
    Ok(ChunkSummary {
        chunk_id: chunk.chunk_id.clone(),
        summary,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RejectedSegment {
    pub name: String,
    pub violations: Vec<Violation>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Extraction {
    pub segments: Vec<ExperienceSegment>,
    pub rejected: Vec<RejectedSegment>,
}

/// Segments from one chunk. Invalid segments are reported in `rejected`; if
/// the reply held segments and every one was invalid, that is an error.
pub fn extract_experience(
    chunk: &DocumentChunk,
    neighbors: &[ChunkSummary],
    gw: &dyn LanguageModel,
) -> Result<Extraction, KnowledgeError> {
    let mut prompt = format!(
        "[task: extract_experience]\nSection: {}\nChunk {}:\n{}\n",
        chunk.section_path.join(" > "),
        chunk.chunk_id,
        chunk.text
    );
    if !neighbors.is_empty() {
        prompt.push_str("\nSummaries of related chunks:\n");
        for n in neighbors {
            prompt.push_str(&format!("- {}: {}\n", n.chunk_id, n.summary));
        }
    }
    let reply = ask(gw, EXTRACT_SYSTEM, prompt)?;
    let mut out = parse_experience_reply(&reply)?;
    for s in &mut out.segments {
        s.source_chunks = vec![chunk.chunk_id.clone()];
    }
    if out.segments.is_empty() {
        if let Some(first) = out.rejected.first() {
            return Err(KnowledgeError::InvalidSegment {
                name: first.name.clone(),
                violations: first.violations.clone(),
            });
        }
    }
    Ok(out)
}

/// Reads zero or more segments out of a model reply. Accepts a JSON array,
/// a single object, `{"segments": [...]}`, objects embedded in prose, and the
/// brace-less `"name": ...` listing style. A reply with no JSON at all means
/// no experience.
pub fn parse_experience_reply(reply: &str) -> Result<Extraction, KnowledgeError> {
    let objects = reply_objects(reply)?;
    let mut out = Extraction::default();
    for obj in objects {
        match segment_from_object(&obj) {
            Ok(seg) => out.segments.push(seg),
            Err(r) => out.rejected.push(r),
        }
    }
    Ok(out)
}

fn reply_objects(reply: &str) -> Result<Vec<Map<String, Value>>, KnowledgeError> {
    let t = strip_fence(reply.trim());
    if let Ok(v) = serde_json::from_str::<Value>(t) {
        return flatten(v);
    }
    let blocks = brace_blocks(t);
    if !blocks.is_empty() {
        let mut out = Vec::new();
        for b in blocks {
            let v: Value = serde_json::from_str(b).map_err(|e| KnowledgeError::Unparseable(e.to_string()))?;
            out.extend(flatten(v)?);
        }
        return Ok(out);
    }
    if t.contains("\"name\"") {
        let wrapped = format!("{{{}}}", t.trim().trim_end_matches(','));
        let v: Value = serde_json::from_str(&wrapped).map_err(|e| KnowledgeError::Unparseable(e.to_string()))?;
        return flatten(v);
    }
    Ok(Vec::new())
}

fn strip_fence(t: &str) -> &str {
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.trim_start_matches(|c: char| c.is_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

fn flatten(v: Value) -> Result<Vec<Map<String, Value>>, KnowledgeError> {
    match v {
        Value::Array(items) => items
            .into_iter()
            .map(|i| match i {
                Value::Object(o) => Ok(o),
                other => Err(KnowledgeError::Unparseable(format!("expected an object, got {other}"))),
            })
            .collect(),
        Value::Object(mut o) => match o.remove("segments") {
            Some(inner @ Value::Array(_)) => flatten(inner),
            Some(other) => {
                o.insert("segments".into(), other);
                Ok(vec![o])
            }
            None => Ok(vec![o]),
        },
        Value::String(_) | Value::Null => Ok(Vec::new()),
        other => Err(KnowledgeError::Unparseable(format!("unexpected JSON value {other}"))),
    }
}

/// Top-level `{...}` spans, skipping braces inside strings.
fn brace_blocks(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start, mut in_str, mut escaped) = (0usize, 0usize, false, false);
    for (i, c) in s.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push(&s[start..=i]);
                }
            }
            _ => {}
        }
    }
    out
}

fn segment_from_object(o: &Map<String, Value>) -> Result<ExperienceSegment, RejectedSegment> {
    let mut violations = Vec::new();
    let name = o.get("name").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    let mut text = |field: &str| match o.get(field) {
        None | Some(Value::Null) => {
            violations.push(Violation::MissingField(field.into()));
            String::new()
        }
        Some(Value::String(s)) => s.trim().to_string(),
        Some(_) => {
            violations.push(Violation::EmptyField(field.into()));
            String::new()
        }
    };
    let _ = text("name");
    let content = text("content");
    let steps = text("steps");
    let metrics: Vec<String> = match o.get("metrics") {
        None | Some(Value::Null) => {
            violations.push(Violation::MissingField("metrics".into()));
            Vec::new()
        }
        Some(Value::Array(a)) => a.iter().map(|m| m.as_str().unwrap_or_default().trim().to_string()).collect(),
        Some(Value::String(s)) => s.split(',').map(|m| m.trim().to_string()).collect(),
        Some(_) => Vec::new(),
    };
    let solutions = match o.get("solutions") {
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_str).map(str::to_string).collect(),
        _ => Vec::new(),
    };
    let seg = ExperienceSegment {
        name: name.clone(),
        content,
        metrics,
        steps,
        source_chunks: Vec::new(),
        solutions,
        kind: SegmentKind::RootCause,
    };
    if violations.is_empty() {
        if let Err(v) = validate_segment(&seg) {
            violations = v;
        }
    } else if let Err(v) = validate_segment(&seg) {
        // Keep only the violations not already explained by a missing field.
        for x in v {
            let dup = matches!(&x, Violation::EmptyField(f) if violations.contains(&Violation::MissingField(f.clone())));
            if !dup {
                violations.push(x);
            }
        }
    }
    if violations.is_empty() {
        Ok(seg)
    } else {
        Err(RejectedSegment { name, violations })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub segmenter: SegmenterConfig,
    /// How many summary-similar chunks accompany each extraction prompt.
    pub neighbors: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            segmenter: SegmenterConfig::default(),
            neighbors: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub chunks: usize,
    pub added: Vec<String>,
    pub already_present: Vec<String>,
    pub rejected: Vec<RejectedSegment>,
    /// Chunks whose reply could not be used at all.
    pub failed_chunks: Vec<(String, String)>,
}

/// Full document pipeline: chunk, summarize, find neighbours by summary
/// similarity, extract, insert. Gateway errors abort; bad replies for one
/// chunk are recorded and the rest continue.
pub fn ingest_document(
    doc: &str,
    kb: &KnowledgeBase,
    gw: &dyn LanguageModel,
    opts: &IngestOptions,
) -> Result<IngestReport, KnowledgeError> {
    let chunks = Segmenter::new(&opts.segmenter)?.segment(doc);
    let mut summaries = Vec::with_capacity(chunks.len());
    let mut vectors: Vec<VectorRecord> = Vec::with_capacity(chunks.len());
    for c in &chunks {
        let s = summarize_chunk(c, gw)?;
        vectors.push(VectorRecord {
            id: c.chunk_id.clone(),
            vector: gw.embed(&s.summary).or_else(|_| gw.embed(&c.chunk_id))?,
            payload: String::new(),
        });
        kb.add_summary(s.clone());
        summaries.push(s);
    }
    let mut report = IngestReport {
        chunks: chunks.len(),
        ..Default::default()
    };
    for (i, c) in chunks.iter().enumerate() {
        let neighbors = nearest_summaries(&vectors[i].vector, &c.chunk_id, &vectors, &summaries, opts.neighbors)?;
        let outcome = match extract_experience(c, &neighbors, gw) {
            Ok(x) => x,
            Err(KnowledgeError::Gateway(e)) => return Err(KnowledgeError::Gateway(e)),
            Err(e) => {
                report.failed_chunks.push((c.chunk_id.clone(), e.to_string()));
                continue;
            }
        };
        report.rejected.extend(outcome.rejected);
        for seg in outcome.segments {
            let name = seg.name.clone();
            if kb.insert(seg) {
                report.added.push(name);
            } else {
                report.already_present.push(name);
            }
        }
    }
    Ok(report)
}

fn nearest_summaries(
    query: &EmbeddingVector,
    own_id: &str,
    vectors: &[VectorRecord],
    summaries: &[ChunkSummary],
    k: usize,
) -> Result<Vec<ChunkSummary>, KnowledgeError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let others: Vec<VectorRecord> = vectors.iter().filter(|v| v.id != own_id).cloned().collect();
    let ranked = rank_by_cosine(query, &others, k).map_err(|e| KnowledgeError::Unparseable(e.to_string()))?;
    Ok(ranked
        .into_iter()
        .filter_map(|(id, _)| summaries.iter().find(|s| s.chunk_id == id).cloned())
        .collect())
}
