//! Threshold interpreter for experience steps.
//!
//! Steps are prose, so two readings are supported. Explicit comparisons such
//! as `seq_scan_rate > 0.6` are taken as written. Otherwise a parenthesized
//! number is tied to the metric mentioned just before it, and cue words in
//! between choose the comparison: "within (1000)" reads as `<=`, "exceeds the
//! threshold (0.02)" as `>`. "total"/"sum" turns several mentions into a sum.
//! Sentences saying something is "not a root cause" describe exclusions.
//!
//! The verdict is `AND(include) AND NOT(AND(exclude))` in three-valued logic,
//! with unknown metrics making a condition unknown.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Gt,
    Ge,
    Lt,
    Le,
}

impl Op {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Op::Gt => lhs > rhs,
            Op::Ge => lhs >= rhs,
            Op::Lt => lhs < rhs,
            Op::Le => lhs <= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Lt => "<",
            Op::Le => "<=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// Summed when there is more than one.
    pub metrics: Vec<String>,
    pub op: Op,
    pub value: f64,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.metrics.join(" + "), self.op.symbol(), self.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub include: Vec<Condition>,
    pub exclude: Vec<Condition>,
}

impl Condition {
    pub fn evaluate(&self, value_of: &dyn Fn(&str) -> Option<f64>) -> Truth {
        let mut sum = 0.0;
        for m in &self.metrics {
            match value_of(m) {
                Some(v) => sum += v,
                None => return Truth::Unknown,
            }
        }
        if self.op.holds(sum, self.value) {
            Truth::True
        } else {
            Truth::False
        }
    }
}

impl Criteria {
    pub fn evaluate(&self, value_of: &dyn Fn(&str) -> Option<f64>) -> Truth {
        let all = |cs: &[Condition]| cs.iter().fold(Truth::True, |acc, c| acc.and(c.evaluate(value_of)));
        let inc = all(&self.include);
        if self.exclude.is_empty() {
            inc
        } else {
            inc.and(all(&self.exclude).not())
        }
    }

    /// Every metric any condition refers to.
    pub fn metrics(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.include.iter().chain(&self.exclude) {
            for m in &c.metrics {
                if !out.contains(m) {
                    out.push(m.clone());
                }
            }
        }
        out
    }
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("valid regex"))
}

fn snake_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\b[a-z][a-z0-9]*(?:_[a-z0-9]+)+\b")
}

fn explicit_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(
        &R,
        r"(?P<lhs>[a-z][a-z0-9_]*(?:\s*\+\s*[a-z][a-z0-9_]*)*)\s*(?P<op>>=|<=|≥|≤|>|<)\s*(?P<num>-?\d+(?:\.\d+)?)\s*(?P<unit>%|[kmg]b\b|k\b)?",
    )
}

fn paren_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"\(\s*(?P<num>-?\d+(?:\.\d+)?)\s*(?P<unit>%|[kmg]b|k)?\s*\)")
}

fn exclusion_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    re(&R, r"not\s+(?:a|the)\s+root\s+cause")
}

const LE_CUES: &[&str] = &[
    "not exceed",
    "within",
    "acceptable",
    "not too",
    "below",
    "under",
    "less than",
    "lower than",
    "smaller than",
    "fewer than",
    "at most",
];
const GE_CUES: &[&str] = &["at least"];
const GT_CUES: &[&str] = &[
    "exceed",
    "above",
    "over",
    "greater than",
    "more than",
    "higher than",
    "larger than",
    "too many",
    "too big",
    "too large",
    "too high",
];

fn scaled(num: &str, unit: Option<&str>) -> Option<f64> {
    let v: f64 = num.parse().ok()?;
    Some(match unit {
        Some("%") => v / 100.0,
        Some("kb") => v * 1024.0,
        Some("mb") => v * 1024.0 * 1024.0,
        Some("gb") => v * 1024.0 * 1024.0 * 1024.0,
        Some("k") => v * 1000.0,
        _ => v,
    })
}

/// Sentences, split after .!? followed by whitespace so decimals survive.
fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if matches!(c, '.' | '!' | '?') && it.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            out.push(&text[start..end]);
            start = end;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

struct Vocabulary {
    entries: Vec<(String, Regex)>,
}

impl Vocabulary {
    fn new(steps: &str, hints: &[String]) -> Self {
        let mut names: Vec<String> = hints.iter().map(|h| h.to_lowercase()).collect();
        for m in snake_re().find_iter(steps) {
            if !names.iter().any(|n| n == m.as_str()) {
                names.push(m.as_str().to_string());
            }
        }
        let entries = names
            .into_iter()
            .filter(|n| !n.is_empty())
            .map(|n| {
                let words: Vec<String> = n.split('_').filter(|w| !w.is_empty()).map(regex::escape).collect();
                let pat = format!(r"\b{}\b", words.join(r"[\s_]+"));
                (n, Regex::new(&pat).expect("escaped words form a valid regex"))
            })
            .collect();
        Self { entries }
    }

    fn knows(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    /// Mentions in `region` as (start, end, metric), dropping any mention
    /// that sits inside a longer one.
    fn mentions(&self, region: &str) -> Vec<(usize, usize, String)> {
        let mut found: Vec<(usize, usize, String)> = Vec::new();
        for (name, r) in &self.entries {
            for m in r.find_iter(region) {
                found.push((m.start(), m.end(), name.clone()));
            }
        }
        let all = found.clone();
        found.retain(|(s, e, _)| {
            !all.iter()
                .any(|(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s))
        });
        found.sort_by_key(|(s, _, _)| *s);
        found
    }
}

fn cue(region: &str) -> Option<Op> {
    if LE_CUES.iter().any(|c| region.contains(c)) {
        Some(Op::Le)
    } else if GE_CUES.iter().any(|c| region.contains(c)) {
        Some(Op::Ge)
    } else if GT_CUES.iter().any(|c| region.contains(c)) {
        Some(Op::Gt)
    } else {
        None
    }
}

/// Parses threshold conditions out of `steps`. `None` when nothing usable is
/// found, which sends the caller to a model judgment instead.
pub fn parse_criteria(steps: &str, metric_hints: &[String]) -> Option<Criteria> {
    let lower = steps.to_lowercase();
    let vocab = Vocabulary::new(&lower, metric_hints);
    let mut criteria = Criteria::default();
    for sentence in sentences(&lower) {
        let mut conds = Vec::new();
        for cap in explicit_re().captures_iter(sentence) {
            let metrics: Vec<String> = cap["lhs"].split('+').map(|s| s.trim().to_string()).collect();
            if !metrics.iter().all(|m| vocab.knows(m) || m.contains('_')) {
                continue;
            }
            let op = match &cap["op"] {
                ">" => Op::Gt,
                ">=" | "≥" => Op::Ge,
                "<" => Op::Lt,
                _ => Op::Le,
            };
            if let Some(value) = scaled(&cap["num"], cap.name("unit").map(|u| u.as_str())) {
                conds.push(Condition { metrics, op, value });
            }
        }
        let mut prev_end = 0;
        for cap in paren_re().captures_iter(sentence) {
            let whole = cap.get(0).expect("group 0");
            let region = &sentence[prev_end..whole.start()];
            prev_end = whole.end();
            let mentions = vocab.mentions(region);
            let Some(last) = mentions.last() else { continue };
            let Some(op) = cue(&region[last.0..]).or_else(|| cue(region)) else { continue };
            let metrics = if mentions.len() > 1 && (region.contains("total") || region.contains("sum")) {
                let mut ms: Vec<String> = Vec::new();
                for (_, _, m) in &mentions {
                    if !ms.contains(m) {
                        ms.push(m.clone());
                    }
                }
                ms
            } else {
                vec![last.2.clone()]
            };
            if let Some(value) = scaled(&cap["num"], cap.name("unit").map(|u| u.as_str())) {
                conds.push(Condition { metrics, op, value });
            }
        }
        if exclusion_re().is_match(sentence) {
            criteria.exclude.extend(conds);
        } else {
            criteria.include.extend(conds);
        }
    }
    if criteria.include.is_empty() && criteria.exclude.is_empty() {
        None
    } else {
        Some(criteria)
    }
}
