//! Rankings checked against brute-force references written independently of
//! the library code.

use dbdoctor_core::gateway::{ChatMessage, CompletionRequest, EmbeddingVector, Gateway, LanguageModel, ScriptRule};
use dbdoctor_core::retrieval::{rank_bm25, rank_by_cosine, Bm25Params, CacheLookup, VectorCache, VectorRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

const TOL: f64 = 1e-9;

/// Scores equal to 12 decimal places are ties.
fn tie_key(s: f64) -> i64 {
    (s * 1e12).round() as i64
}

fn reference_bm25(query: &[String], docs: &[Vec<String>], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&String> = query.iter().collect();
    docs.iter()
        .map(|d| {
            let mut s = 0.0;
            for t in &terms {
                let f = d.iter().filter(|w| w == t).count() as f64;
                if f == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|o| o.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let norm = if avgdl > 0.0 { d.len() as f64 / avgdl } else { 1.0 };
                s += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm));
            }
            s
        })
        .collect()
}

/// A ranking agrees with reference scores when it lists every index once,
/// scores are non-increasing, each listed score matches the reference, and
/// indices with equal reference scores keep input order.
fn ranking_agrees(got: &[(usize, f64)], reference: &[f64]) -> bool {
    if got.len() != reference.len() {
        return false;
    }
    let ids: BTreeSet<usize> = got.iter().map(|g| g.0).collect();
    if ids.len() != reference.len() {
        return false;
    }
    for (pos, &(i, s)) in got.iter().enumerate() {
        if (s - reference[i]).abs() > TOL {
            return false;
        }
        if pos > 0 {
            let (j, _) = got[pos - 1];
            if tie_key(reference[j]) < tie_key(reference[i]) {
                return false;
            }
            if tie_key(reference[j]) == tie_key(reference[i]) && j > i {
                return false;
            }
        }
    }
    true
}

#[test]
fn bm25_matches_exhaustive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = Bm25Params::default();
    let mut mismatches = 0;
    for trial in 0..500 {
        let vocab: Vec<String> = (0..rng.gen_range(1..=20)).map(|i| format!("w{i}")).collect();
        let docs: Vec<Vec<String>> = (0..rng.gen_range(1..=8))
            .map(|_| (0..rng.gen_range(0..12)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect())
            .collect();
        let query: Vec<String> = (0..rng.gen_range(1..=6)).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
        let got = rank_bm25(&query, &docs, p);
        let want = reference_bm25(&query, &docs, p.k1, p.b);
        if !ranking_agrees(&got, &want) {
            mismatches += 1;
            eprintln!("trial {trial}: {got:?} vs {want:?}");
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn cosine_top_k_matches_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for trial in 0..500 {
        let dim = rng.gen_range(1..=8);
        let vector = |rng: &mut ChaCha8Rng| {
            // Small integer grid so exact ties actually occur.
            EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-2..=2) as f64).collect())
        };
        let store: Vec<VectorRecord> = (0..rng.gen_range(0..=64))
            .map(|i| VectorRecord {
                id: format!("r{i:02}"),
                vector: vector(&mut rng),
                payload: String::new(),
            })
            .collect();
        let q = vector(&mut rng);
        let k = rng.gen_range(0..=70);
        let got = rank_by_cosine(&q, &store, k).unwrap();

        let mut full: Vec<(String, f64)> = store
            .iter()
            .map(|r| {
                let dot: f64 = q.values.iter().zip(&r.vector.values).map(|(a, b)| a * b).sum();
                let na = q.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = r.vector.values.iter().map(|x| x * x).sum::<f64>().sqrt();
                (r.id.clone(), if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) })
            })
            .collect();
        full.sort_by(|a, b| tie_key(b.1).cmp(&tie_key(a.1)).then_with(|| a.0.cmp(&b.0)));
        full.truncate(k);
        let same = got.len() == full.len() && got.iter().zip(&full).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() <= TOL);
        if !same {
            mismatches += 1;
            eprintln!("trial {trial}: {got:?} vs {full:?}");
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn duplicate_request_is_served_without_completion() {
    let gw = Gateway::from_rules(vec![ScriptRule::new("dead tuples", "Run VACUUM on the bloated table.")]).unwrap();
    let cache = VectorCache::default();
    let request = "Why are there so many dead tuples in orders?";
    let answer = |gw: &Gateway| {
        let reply: ChatMessage = gw.complete(&CompletionRequest::prompt("answer briefly", request)).unwrap();
        Ok(reply.content)
    };

    let first = cache.get_or_answer(request, &gw, || answer(&gw)).unwrap();
    assert_eq!(gw.completion_calls(), 1);

    let before = gw.completion_calls();
    let second = cache.get_or_answer(request, &gw, || answer(&gw)).unwrap();
    assert_eq!(gw.completion_calls() - before, 0);
    assert_eq!(first, second);
    assert_eq!(cache.hits(), 1);
}

#[test]
fn empty_cache_always_misses() {
    let gw = Gateway::from_rules(vec![]).unwrap();
    let cache = VectorCache::new(0.5).unwrap();
    for q in ["anything", "dead tuples", "x"] {
        assert_eq!(cache.lookup(q, &gw).unwrap(), CacheLookup::Miss);
    }
    assert_eq!(cache.hits(), 0);
    assert_eq!(gw.completion_calls(), 0);
}

#[test]
fn unrelated_request_misses() {
    let gw = Gateway::from_rules(vec![]).unwrap();
    let cache = VectorCache::default();
    cache.insert("slow inserts on the events table", "batch them", &gw).unwrap();
    assert_eq!(cache.lookup("disk is full on the replica", &gw).unwrap(), CacheLookup::Miss);
}
