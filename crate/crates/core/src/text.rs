//! Tokenization shared by chunk sizing, BM25 and the scripted embedder.
//!
//! A token is a maximal run of alphanumeric characters, lowercased. Every
//! other character separates tokens, so `cpu_usage` yields `cpu` and `usage`.

use rust_stemmers::{Algorithm, Stemmer};
use std::sync::OnceLock;

/// Byte ranges of the tokens in `text`, in order.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push((s, i));
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

pub fn token_count(text: &str) -> usize {
    token_spans(text).len()
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// English Snowball stem of an already lowercased token.
pub fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

/// Tokenize then stem.
pub fn stemmed_tokens(text: &str) -> Vec<String> {
    tokenize(text).iter().map(|t| stem(t)).collect()
}

/// Char-safe prefix of at most `max_chars` characters.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_separates_tokens() {
        assert_eq!(tokenize("CPU_usage is 95%!"), vec!["cpu", "usage", "is", "95"]);
        assert!(tokenize("  ... --- ").is_empty());
    }

    #[test]
    fn spans_point_into_source() {
        let text = "héllo, wörld";
        let spans = token_spans(text);
        assert_eq!(&text[spans[0].0..spans[0].1], "héllo");
        assert_eq!(&text[spans[1].0..spans[1].1], "wörld");
    }

    #[test]
    fn stems_inflections() {
        assert_eq!(stem("analyzing"), stem("analyze"));
        assert_eq!(stemmed_tokens("Examining indexes"), vec![stem("examine"), stem("index")]);
    }

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_chars("ééé", 2), "éé");
        assert_eq!(truncate_chars("ab", 5), "ab");
    }
}
