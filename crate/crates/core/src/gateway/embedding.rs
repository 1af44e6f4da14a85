//! Offline pseudo-embeddings.
//!
//! Each distinct token owns a dense pseudo-random direction drawn from a
//! SplitMix64 stream seeded with `fnv1a(token) ^ seed`. A text's vector is the
//! count-weighted sum of its token directions, normalized. Summation runs in
//! sorted token order, so any permutation of the same tokens gives the same
//! bits.

use super::{EmbeddingVector, GatewayError};
use crate::text::tokenize;
use std::collections::BTreeMap;

pub const DEFAULT_SEED: u64 = 0x6462_646f_6374_6f72;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct SplitMix64(u64);

impl SplitMix64 {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    fn next_unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

pub fn hashed_embedding(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector, GatewayError> {
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    for t in tokenize(text) {
        *counts.entry(t).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(GatewayError::EmptyInput);
    }
    let mut acc = vec![0.0f64; dim];
    for (tok, count) in &counts {
        let mut rng = SplitMix64(fnv1a(tok.as_bytes()) ^ seed);
        for slot in acc.iter_mut() {
            *slot += f64::from(*count) * rng.next_unit();
        }
    }
    Ok(EmbeddingVector::new(acc).normalized())
}
