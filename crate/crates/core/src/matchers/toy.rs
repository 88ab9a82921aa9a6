//! Deterministic, dependency-free scorers used for tests and desk-scale runs.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use super::TextEmbedder;
use crate::error::{Error, Result};
use crate::text_index::tokenize;

pub const TOY_TEXT_DIM: usize = 256;
pub const JACCARD_EPS: f64 = 1e-6;

/// FNV-1a 64 of the token bytes. Pinned: changing it changes every toy score.
pub fn token_hash(token: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.finish()
}

/// Hashed bag-of-words: each token adds ±1 to one of `dim` buckets; the
/// result is L2-normalised. Texts without tokens have no embedding.
#[derive(Debug, Clone, Copy)]
pub struct ToyTextEncoder {
    pub dim: usize,
}

impl Default for ToyTextEncoder {
    fn default() -> Self {
        Self { dim: TOY_TEXT_DIM }
    }
}

impl TextEmbedder for ToyTextEncoder {
    fn embed(&self, text: &str) -> Option<Vec<f32>> {
        let mut v = vec![0.0f64; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            let h = token_hash(&tok);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
            any = true;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !any || norm == 0.0 {
            return None;
        }
        Some(v.iter().map(|x| (x / norm) as f32).collect())
    }
}

/// Token-set Jaccard similarity.
pub fn jaccard(a: &str, b: &str) -> Option<f64> {
    let sa: BTreeSet<String> = tokenize(a).into_iter().collect();
    let sb: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return None;
    }
    Some(sa.intersection(&sb).count() as f64 / union as f64)
}

/// Toy cross scorer: `logit(J·(1−2ε) + ε)` of the token Jaccard `J`.
pub fn toy_cross_score(query: &str, evidence: &str) -> Option<f64> {
    let j = jaccard(query, evidence)?;
    let p = j * (1.0 - 2.0 * JACCARD_EPS) + JACCARD_EPS;
    Some((p / (1.0 - p)).ln())
}

/// Token -> joint-space direction. Texts embed as the sum of the directions
/// of their known tokens, which puts them in the same space as the joint
/// image vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub dim: usize,
    pub tokens: BTreeMap<String, Vec<f32>>,
}

impl Lexicon {
    pub fn new(dim: usize, tokens: impl IntoIterator<Item = (String, Vec<f32>)>) -> Self {
        Self {
            dim,
            tokens: tokens.into_iter().collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string(self).expect("lexicon serializes");
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::malformed(path, 1, e))
    }
}

impl TextEmbedder for Lexicon {
    fn embed(&self, text: &str) -> Option<Vec<f32>> {
        let mut acc = vec![0.0f64; self.dim];
        let mut any = false;
        for tok in tokenize(text) {
            if let Some(v) = self.tokens.get(&tok) {
                acc.iter_mut().zip(v).for_each(|(a, &x)| *a += x as f64);
                any = true;
            }
        }
        if !any || acc.iter().all(|&x| x == 0.0) {
            return None;
        }
        Some(acc.into_iter().map(|x| x as f32).collect())
    }
}
