//! Section-aware recursive chunking.
//!
//! A document is first cut at heading lines. Any section over the token
//! budget is split in two at the paragraph break nearest its token midpoint,
//! falling back to the nearest sentence end and finally to the midpoint token
//! itself, and each half is handled the same way. Chunk texts are trimmed
//! slices of the source, so the chunks in order contain every non-whitespace
//! character of the document exactly once.

use super::{DocumentChunk, KnowledgeError};
use crate::text::token_spans;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub max_chunk_tokens: usize,
    /// Regexes matched against each line; a match starts a new section.
    pub separators: Vec<String>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            max_chunk_tokens: 1000,
            separators: vec![r"^\s{0,3}#{1,6}\s+\S".into(), r"^\d+(\.\d+)*\.?\s+[A-Z]".into()],
        }
    }
}

pub struct Segmenter {
    max: usize,
    separators: Vec<Regex>,
}

/// Splits `doc` with the default heading patterns.
pub fn segment_document(doc: &str, max_chunk_tokens: usize) -> Result<Vec<DocumentChunk>, KnowledgeError> {
    let cfg = SegmenterConfig {
        max_chunk_tokens,
        ..SegmenterConfig::default()
    };
    Ok(Segmenter::new(&cfg)?.segment(doc))
}

struct Heading {
    level: usize,
    title: String,
}

impl Segmenter {
    pub fn new(cfg: &SegmenterConfig) -> Result<Self, KnowledgeError> {
        if cfg.max_chunk_tokens < 8 {
            return Err(KnowledgeError::ChunkSizeTooSmall(cfg.max_chunk_tokens));
        }
        let separators = cfg
            .separators
            .iter()
            .map(|p| {
                Regex::new(p).map_err(|e| KnowledgeError::BadSeparator {
                    pattern: p.clone(),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            max: cfg.max_chunk_tokens,
            separators,
        })
    }

    fn heading(&self, line: &str) -> Option<Heading> {
        if !self.separators.iter().any(|r| r.is_match(line)) {
            return None;
        }
        let t = line.trim();
        let hashes = t.chars().take_while(|c| *c == '#').count();
        if hashes > 0 {
            return Some(Heading {
                level: hashes,
                title: t[hashes..].trim().to_string(),
            });
        }
        let number: String = t.chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
        let level = number.trim_end_matches('.').split('.').filter(|p| !p.is_empty()).count().max(1);
        Some(Heading {
            level,
            title: t.to_string(),
        })
    }

    pub fn segment(&self, doc: &str) -> Vec<DocumentChunk> {
        // Section boundaries are byte offsets of heading line starts.
        let mut sections: Vec<(usize, Vec<String>)> = vec![(0, Vec::new())];
        let mut stack: Vec<(usize, String)> = Vec::new();
        let mut offset = 0;
        for line in doc.split_inclusive('\n') {
            if let Some(h) = self.heading(line.trim_end_matches(['\n', '\r'])) {
                while stack.last().is_some_and(|(lvl, _)| *lvl >= h.level) {
                    stack.pop();
                }
                stack.push((h.level, h.title));
                let path = stack.iter().map(|(_, t)| t.clone()).collect();
                if offset == 0 {
                    sections[0].1 = path;
                } else {
                    sections.push((offset, path));
                }
            }
            offset += line.len();
        }

        let mut pieces: Vec<(&str, &Vec<String>)> = Vec::new();
        for (i, (start, path)) in sections.iter().enumerate() {
            let end = sections.get(i + 1).map_or(doc.len(), |s| s.0);
            self.split(&doc[*start..end], path, &mut pieces);
        }
        pieces
            .into_iter()
            .enumerate()
            .map(|(i, (text, path))| DocumentChunk {
                chunk_id: format!("chunk-{i:04}"),
                section_path: path.clone(),
                text: text.to_string(),
                token_count: token_spans(text).len(),
            })
            .collect()
    }

    fn split<'a, 'p>(&self, slice: &'a str, path: &'p Vec<String>, out: &mut Vec<(&'a str, &'p Vec<String>)>) {
        let trimmed = slice.trim();
        if trimmed.is_empty() {
            return;
        }
        let spans = token_spans(slice);
        if spans.len() <= self.max {
            out.push((trimmed, path));
            return;
        }
        let cut = split_point(slice, &spans);
        self.split(&slice[..cut], path, out);
        self.split(&slice[cut..], path, out);
    }
}

/// Byte offset to cut at. Both sides keep at least one token.
fn split_point(slice: &str, spans: &[(usize, usize)]) -> usize {
    let n = spans.len();
    let target = spans[n / 2].0;
    // A cut at `pos` is usable when some token starts before it and some
    // token starts at or after it.
    let usable = |pos: usize| pos > spans[0].0 && pos <= spans[n - 1].0;
    let nearest = |cands: Vec<usize>| {
        cands
            .into_iter()
            .filter(|p| usable(*p))
            .min_by_key(|p| (p.abs_diff(target), *p))
    };
    if let Some(p) = nearest(paragraph_breaks(slice)) {
        return p;
    }
    if let Some(p) = nearest(sentence_ends(slice)) {
        return p;
    }
    target
}

/// Offsets just past a blank line.
fn paragraph_breaks(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    let mut prev_blank = false;
    for line in s.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if prev_blank && !blank {
            out.push(offset);
        }
        prev_blank = blank && line.ends_with('\n');
        offset += line.len();
    }
    out
}

/// Offsets just past sentence-final punctuation followed by whitespace.
fn sentence_ends(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut it = s.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some((_, next)) = it.peek() {
                if next.is_whitespace() {
                    out.push(i + c.len_utf8());
                }
            }
        }
    }
    out
}
