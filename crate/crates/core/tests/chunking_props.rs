use dbdoctor_core::knowledge::{segment_document, Segmenter, SegmenterConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "vacuum", "index", "tuple", "bloat", "query", "plan", "lock", "wal", "checkpoint", "Größe", "naïve", "pg_stat",
    "autovacuum", "x1", "42", "table-size", "I/O",
];

fn tokens(text: &str) -> usize {
    let mut n = 0;
    let mut inside = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if !inside {
                n += 1;
            }
            inside = true;
        } else {
            inside = false;
        }
    }
    n
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..15);
    let words: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
    let end = [".", "!", "?", ";", ""][rng.gen_range(0..5)];
    format!("{}{end}", words.join(" "))
}

fn document(rng: &mut ChaCha8Rng) -> String {
    let mut doc = String::new();
    for _ in 0..rng.gen_range(0..12) {
        match rng.gen_range(0..6) {
            0 => doc.push_str(&format!("{} {}\n", "#".repeat(rng.gen_range(1..=4)), sentence(rng))),
            1 => doc.push_str(&format!("{}.{} Section {}\n", rng.gen_range(1..9), rng.gen_range(1..9), sentence(rng))),
            2 => {
                // One run-on paragraph with no sentence ends at all.
                let n = rng.gen_range(20..400);
                let words: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
                doc.push_str(&words.join(" "));
                doc.push_str("\n\n");
            }
            _ => {
                for _ in 0..rng.gen_range(1..8) {
                    doc.push_str(&sentence(rng));
                    doc.push(if rng.gen_bool(0.3) { '\n' } else { ' ' });
                }
                doc.push_str(if rng.gen_bool(0.5) { "\n\n" } else { "\n \t\n" });
            }
        }
    }
    doc
}

fn squeeze(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[test]
fn chunks_respect_budget_and_cover_source() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..200 {
        let doc = document(&mut rng);
        let max = rng.gen_range(8..=120);
        let chunks = segment_document(&doc, max).unwrap();
        for c in &chunks {
            let n = tokens(&c.text);
            assert!(n <= max, "doc {i}: chunk {} has {n} tokens > {max}", c.chunk_id);
            assert_eq!(n, c.token_count, "doc {i}: chunk {} miscounted", c.chunk_id);
            assert!(!c.text.trim().is_empty(), "doc {i}: empty chunk");
        }
        let joined: String = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n");
        assert_eq!(squeeze(&joined), squeeze(&doc), "doc {i}: concatenation differs from source");
        let mut ids: Vec<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
        let total = ids.len();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), total, "doc {i}: duplicate chunk ids");
    }
}

#[test]
fn headings_become_section_paths() {
    let doc = "# Maintenance\nintro text\n## Dead tuples\nVacuum often.\n## Indexes\nDrop unused ones.\n";
    let chunks = segment_document(doc, 100).unwrap();
    let paths: Vec<Vec<String>> = chunks.iter().map(|c| c.section_path.clone()).collect();
    assert!(paths.contains(&vec!["Maintenance".to_string(), "Dead tuples".to_string()]));
    assert!(paths.contains(&vec!["Maintenance".to_string(), "Indexes".to_string()]));
}

#[test]
fn tiny_budget_is_rejected() {
    assert!(segment_document("a b c", 2).is_err());
    let bad = SegmenterConfig {
        separators: vec!["(".into()],
        ..SegmenterConfig::default()
    };
    assert!(Segmenter::new(&bad).is_err());
}
