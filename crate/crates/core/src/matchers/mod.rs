//! Stage-2 matching between a query pair and each candidate's evidence.
//!
//! Four matchers produce one score each:
//!
//! | kind | compares | raw score | normalised |
//! |------|----------|-----------|------------|
//! | TBM  | query text ↔ evidence text, tied bi-encoder | cosine | `(raw+1)/2` |
//! | TCM  | (query text, evidence text) cross scorer | relevance logit | `1/(1+e^-raw)` |
//! | IBM  | query image ↔ evidence image | cosine | `(raw+1)/2` |
//! | CLIP | text ↔ image in a joint space, both directions | cosine | `(raw+1)/2` |
//!
//! A matcher whose inputs are unavailable marks the score missing and emits
//! the neutral 0.5.
//!
//! Providers are pluggable per kind: toy encoders, precomputed embedding
//! tables, or a remote scoring service (see [`remote`]). Each call to
//! [`score_evidence`] issues exactly one batch per matcher kind.

mod precomputed;
pub mod remote;
mod toy;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{QueryPair, VectorStore};
use crate::retrieval::Candidate;
use crate::vector_index::cosine_similarity;

pub use precomputed::PrecomputedTextEmbeddings;
pub use toy::{jaccard, toy_cross_score, token_hash, Lexicon, ToyTextEncoder, JACCARD_EPS, TOY_TEXT_DIM};

pub const NEUTRAL_SCORE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatcherKind {
    #[serde(rename = "TBM")]
    Tbm,
    #[serde(rename = "TCM")]
    Tcm,
    #[serde(rename = "IBM")]
    Ibm,
    #[serde(rename = "CLIP")]
    Clip,
}

impl MatcherKind {
    /// Canonical order, also the coordinate order of [`ScoreVector`] and of
    /// fusion weight tuples.
    pub const ALL: [MatcherKind; 4] = [MatcherKind::Tbm, MatcherKind::Tcm, MatcherKind::Ibm, MatcherKind::Clip];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            MatcherKind::Tbm => "TBM",
            MatcherKind::Tcm => "TCM",
            MatcherKind::Ibm => "IBM",
            MatcherKind::Clip => "CLIP",
        }
    }
}

impl fmt::Display for MatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatcherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TBM" => Ok(MatcherKind::Tbm),
            "TCM" => Ok(MatcherKind::Tcm),
            "IBM" => Ok(MatcherKind::Ibm),
            "CLIP" => Ok(MatcherKind::Clip),
            _ => Err(Error::Config(format!("unknown matcher {s:?}"))),
        }
    }
}

/// Normalised per-matcher scores in [0, 1] with missing flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: [f64; 4],
    pub missing: [bool; 4],
}

impl ScoreVector {
    pub fn new(scores: [f64; 4]) -> Self {
        Self {
            scores,
            missing: [false; 4],
        }
    }

    pub fn get(&self, kind: MatcherKind) -> f64 {
        self.scores[kind.index()]
    }

    pub fn is_missing(&self, kind: MatcherKind) -> bool {
        self.missing[kind.index()]
    }

    fn set(&mut self, kind: MatcherKind, value: Option<f64>) {
        match value {
            Some(v) => {
                self.scores[kind.index()] = v;
                self.missing[kind.index()] = false;
            }
            None => {
                self.scores[kind.index()] = NEUTRAL_SCORE;
                self.missing[kind.index()] = true;
            }
        }
    }
}

/// Maps a raw matcher output into [0, 1].
pub fn normalize_score(kind: MatcherKind, raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::Provider(format!("{kind} produced non-finite score {raw}")));
    }
    Ok(match kind {
        MatcherKind::Tcm => 1.0 / (1.0 + (-raw).exp()),
        _ => ((raw + 1.0) / 2.0).clamp(0.0, 1.0),
    })
}

/// Text -> vector encoder.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Option<Vec<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextPair<'a> {
    pub query: &'a str,
    pub evidence: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRef<'a> {
    pub image_id: &'a str,
    pub vec: &'a [f32],
}

/// A text and a joint-space image id, scored by the cross-modal matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextImage<'a> {
    pub text: &'a str,
    pub image_id: &'a str,
}

/// Raw scores for text pairs (TBM, TCM). `None` marks a missing input.
pub trait TextPairScorer: Send + Sync {
    fn score_text_pairs(&self, pairs: &[TextPair<'_>]) -> Result<Vec<Option<f64>>>;
}

/// Raw scores for `(query image, evidence image)` pairs (IBM).
pub trait ImagePairScorer: Send + Sync {
    fn score_image_pairs(&self, pairs: &[(ImageRef<'_>, ImageRef<'_>)]) -> Result<Vec<Option<f64>>>;
}

/// Raw scores for text/image pairs in the joint space (CLIP).
pub trait TextImageScorer: Send + Sync {
    fn score_text_images(&self, items: &[TextImage<'_>]) -> Result<Vec<Option<f64>>>;
}

/// Tied bi-encoder: the same embedder on both sides, cosine similarity.
#[derive(Debug, Clone)]
pub struct BiEncoder<E>(pub E);

impl<E: TextEmbedder> TextPairScorer for BiEncoder<E> {
    fn score_text_pairs(&self, pairs: &[TextPair<'_>]) -> Result<Vec<Option<f64>>> {
        Ok(pairs
            .iter()
            .map(|p| {
                let a = self.0.embed(p.query)?;
                let b = self.0.embed(p.evidence)?;
                cosine_similarity(&a, &b).ok()
            })
            .collect())
    }
}

/// Token-Jaccard logit cross scorer.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyCrossScorer;

impl TextPairScorer for ToyCrossScorer {
    fn score_text_pairs(&self, pairs: &[TextPair<'_>]) -> Result<Vec<Option<f64>>> {
        Ok(pairs.iter().map(|p| toy_cross_score(p.query, p.evidence)).collect())
    }
}

/// Image bi-encoder over stored vectors: the encoder is the identity, so the
/// score is the cosine of the two vectors.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredImageScorer;

impl ImagePairScorer for StoredImageScorer {
    fn score_image_pairs(&self, pairs: &[(ImageRef<'_>, ImageRef<'_>)]) -> Result<Vec<Option<f64>>> {
        pairs
            .iter()
            .map(|(q, e)| {
                ibm_score(q.vec, e.vec)
                    .map(Some)
                    .map_err(|err| Error::Provider(format!("IBM {} vs {}: {err}", q.image_id, e.image_id)))
            })
            .collect()
    }
}

/// Joint-space scorer: text embedder plus a store of joint image vectors.
/// Image ids absent from the store yield missing scores.
pub struct JointScorer<E> {
    pub text: E,
    pub images: Arc<VectorStore>,
}

impl<E: TextEmbedder> TextImageScorer for JointScorer<E> {
    fn score_text_images(&self, items: &[TextImage<'_>]) -> Result<Vec<Option<f64>>> {
        Ok(items
            .iter()
            .map(|it| {
                let img = self.images.get(it.image_id)?;
                let t = self.text.embed(it.text)?;
                cosine_similarity(&t, img).ok()
            })
            .collect())
    }
}

/// One provider per matcher kind.
#[derive(Clone)]
pub struct ScorerBindings {
    pub tbm: Arc<dyn TextPairScorer>,
    pub tcm: Arc<dyn TextPairScorer>,
    pub ibm: Arc<dyn ImagePairScorer>,
    pub clip: Arc<dyn TextImageScorer>,
}

impl ScorerBindings {
    /// Toy providers: hashed bag-of-words TBM, Jaccard TCM, stored-vector IBM
    /// and a lexicon-driven CLIP over `joint` image vectors.
    pub fn toy(lexicon: Lexicon, joint: Arc<VectorStore>) -> Self {
        Self {
            tbm: Arc::new(BiEncoder(ToyTextEncoder::default())),
            tcm: Arc::new(ToyCrossScorer),
            ibm: Arc::new(StoredImageScorer),
            clip: Arc::new(JointScorer {
                text: lexicon,
                images: joint,
            }),
        }
    }
}

pub fn tbm_score(query_text: &str, evidence_text: &str, b: &ScorerBindings) -> Result<Option<f64>> {
    single(b.tbm.score_text_pairs(&[TextPair {
        query: query_text,
        evidence: evidence_text,
    }])?)
}

pub fn tcm_score(query_text: &str, evidence_text: &str, b: &ScorerBindings) -> Result<Option<f64>> {
    single(b.tcm.score_text_pairs(&[TextPair {
        query: query_text,
        evidence: evidence_text,
    }])?)
}

/// Cosine of two image vectors.
pub fn ibm_score(query_vec: &[f32], evidence_vec: &[f32]) -> Result<f64> {
    cosine_similarity(query_vec, evidence_vec)
}

pub fn clip_score(text: &str, joint_image_id: &str, b: &ScorerBindings) -> Result<Option<f64>> {
    single(b.clip.score_text_images(&[TextImage {
        text,
        image_id: joint_image_id,
    }])?)
}

fn single(v: Vec<Option<f64>>) -> Result<Option<f64>> {
    match v.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Provider(format!("expected 1 score, got {}", v.len()))),
    }
}

/// Evidence instances of one candidate. The first text and first image are
/// the retrieved/paired instance; further entries are assembled extras.
#[derive(Debug, Clone, Default)]
pub struct EvidenceSet<'a> {
    pub texts: Vec<&'a str>,
    pub images: Vec<ImageRef<'a>>,
}

impl<'a> EvidenceSet<'a> {
    pub fn of(c: &'a Candidate) -> Self {
        Self {
            texts: c.evidence_text.iter().map(|t| t.text.as_str()).collect(),
            images: c
                .evidence_image
                .iter()
                .map(|i| ImageRef {
                    image_id: &i.image_id,
                    vec: &i.vec,
                })
                .collect(),
        }
    }
}

fn check_len(kind: MatcherKind, got: usize, want: usize, query: &QueryPair) -> Result<()> {
    if got != want {
        return Err(Error::Provider(format!(
            "{kind} returned {got} scores for {want} items (query {})",
            query.query_id
        )));
    }
    Ok(())
}

/// Running mean of normalised scores.
#[derive(Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }
    fn get(self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Scores every evidence set against `query`, one provider batch per matcher.
/// Each matcher's score is the mean of its normalised scores over the
/// available instances; CLIP averages the query-text→image and
/// evidence-text→query-image directions when both exist.
pub fn score_evidence(query: &QueryPair, sets: &[EvidenceSet<'_>], b: &ScorerBindings) -> Result<Vec<ScoreVector>> {
    let mut out = vec![ScoreVector::new([NEUTRAL_SCORE; 4]); sets.len()];

    let text_pairs: Vec<TextPair<'_>> = sets
        .iter()
        .flat_map(|s| s.texts.iter().map(|t| TextPair {
            query: &query.text,
            evidence: t,
        }))
        .collect();
    for (kind, scorer) in [(MatcherKind::Tbm, &b.tbm), (MatcherKind::Tcm, &b.tcm)] {
        let raw = if text_pairs.is_empty() {
            Vec::new()
        } else {
            scorer.score_text_pairs(&text_pairs)?
        };
        check_len(kind, raw.len(), text_pairs.len(), query)?;
        let mut it = raw.into_iter();
        for (s, sv) in sets.iter().zip(out.iter_mut()) {
            let mut m = Mean::default();
            for r in it.by_ref().take(s.texts.len()).flatten() {
                m.push(normalize_score(kind, r)?);
            }
            sv.set(kind, m.get());
        }
    }

    let query_image = ImageRef {
        image_id: &query.image_id,
        vec: &query.image_vec,
    };
    let image_pairs: Vec<(ImageRef<'_>, ImageRef<'_>)> = sets
        .iter()
        .flat_map(|s| s.images.iter().map(|&i| (query_image, i)))
        .collect();
    let raw = if image_pairs.is_empty() {
        Vec::new()
    } else {
        b.ibm.score_image_pairs(&image_pairs)?
    };
    check_len(MatcherKind::Ibm, raw.len(), image_pairs.len(), query)?;
    let mut it = raw.into_iter();
    for (s, sv) in sets.iter().zip(out.iter_mut()) {
        let mut m = Mean::default();
        for r in it.by_ref().take(s.images.len()).flatten() {
            m.push(normalize_score(MatcherKind::Ibm, r)?);
        }
        sv.set(MatcherKind::Ibm, m.get());
    }

    // per set: all query-text/evidence-image items, then evidence-text/query-image
    let mut items = Vec::new();
    for s in sets {
        items.extend(s.images.iter().map(|i| TextImage {
            text: &query.text,
            image_id: i.image_id,
        }));
        items.extend(s.texts.iter().map(|t| TextImage {
            text: t,
            image_id: &query.image_id,
        }));
    }
    let raw = if items.is_empty() {
        Vec::new()
    } else {
        b.clip.score_text_images(&items)?
    };
    check_len(MatcherKind::Clip, raw.len(), items.len(), query)?;
    let mut it = raw.into_iter();
    for (s, sv) in sets.iter().zip(out.iter_mut()) {
        let mut to_image = Mean::default();
        for r in it.by_ref().take(s.images.len()).flatten() {
            to_image.push(normalize_score(MatcherKind::Clip, r)?);
        }
        let mut to_text = Mean::default();
        for r in it.by_ref().take(s.texts.len()).flatten() {
            to_text.push(normalize_score(MatcherKind::Clip, r)?);
        }
        let mut both = Mean::default();
        to_image.get().into_iter().chain(to_text.get()).for_each(|v| both.push(v));
        sv.set(MatcherKind::Clip, both.get());
    }
    Ok(out)
}

/// Scores each candidate's single evidence pair; order is preserved.
pub fn score_candidates(
    query: &QueryPair,
    candidates: &[Candidate],
    b: &ScorerBindings,
) -> Result<Vec<(Candidate, ScoreVector)>> {
    let sets: Vec<EvidenceSet<'_>> = candidates.iter().map(EvidenceSet::of).collect();
    let scores = score_evidence(query, &sets, b)?;
    Ok(candidates.iter().cloned().zip(scores).collect())
}
