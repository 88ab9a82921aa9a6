//! Stage-1 candidate generation and evidence pairing.
//!
//! Both channels run independently: BM25 over glosses returns `n_texts`
//! hits, HNSW over KB image vectors returns `m_images` hits. Each hit maps
//! to its owning entity, only the best hit per entity per channel is kept,
//! and the channels are merged by entity. A text-channel entity is paired
//! with one of its images and an image-channel entity with one of its
//! glosses, so every candidate carries a (text, image) evidence pair where
//! the KB allows.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, QueryPair};
use crate::matchers::token_hash;
use crate::text_index::{Bm25Params, TextIndex};
use crate::vector_index::{HnswIndex, HnswParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Text,
    Image,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceText {
    pub gloss_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceImage {
    pub image_id: String,
    pub vec: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity_id: EntityId,
    pub evidence_text: Option<EvidenceText>,
    pub evidence_image: Option<EvidenceImage>,
    pub channel: Channel,
    /// BM25 score for text and both, cosine similarity for image-only.
    pub retrieval_score: f64,
    pub text_score: Option<f64>,
    pub image_score: Option<f64>,
}

/// How a counterpart is chosen for a retrieved instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// The first KB-side instance in stored order.
    #[default]
    First,
    /// Uniform over KB-side instances, keyed by seed and entity id.
    Random(u64),
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pairing::First => f.write_str("first"),
            Pairing::Random(s) => write!(f, "random:{s}"),
        }
    }
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(Pairing::First),
            _ => s
                .strip_prefix("random:")
                .and_then(|n| n.parse().ok())
                .map(Pairing::Random)
                .ok_or_else(|| Error::Config(format!("pairing must be `first` or `random:<seed>`, got {s:?}"))),
        }
    }
}

impl Serialize for Pairing {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pairing {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub n_texts: usize,
    pub m_images: usize,
    pub pairing: Pairing,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_texts: 100,
            m_images: 100,
            pairing: Pairing::First,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_texts == 0 || self.m_images == 0 {
            return Err(Error::Config("n_texts and m_images must be at least 1".into()));
        }
        Ok(())
    }
}

/// Both retrieval indices over one KB.
#[derive(Debug, Clone)]
pub struct Indices {
    pub text: TextIndex,
    pub image: HnswIndex,
}

impl Indices {
    pub fn build(kb: &KnowledgeBase, bm25: Bm25Params, hnsw: HnswParams) -> Result<Self> {
        bm25.validate()?;
        Ok(Self {
            text: TextIndex::build(kb, bm25),
            image: HnswIndex::build(kb.vectors(), hnsw)?,
        })
    }
}

fn pick(len: usize, mode: Pairing, entity: &EntityId) -> usize {
    match mode {
        Pairing::First => 0,
        Pairing::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ token_hash(entity.as_str()));
            rng.random_range(0..len)
        }
    }
}

/// Image paired with a text-channel hit. `None` when the entity has no
/// KB-side image.
pub fn pair_text_candidate<'a>(kb: &'a KnowledgeBase, entity: &EntityId, mode: Pairing) -> Result<Option<&'a str>> {
    let e = kb
        .entity(entity)
        .ok_or_else(|| Error::Data(format!("unknown entity {entity}")))?;
    if e.image_ids.is_empty() {
        return Ok(None);
    }
    Ok(Some(&e.image_ids[pick(e.image_ids.len(), mode, entity)]))
}

/// Gloss index paired with an image-channel hit. `None` when the entity has
/// no KB-side gloss.
pub fn pair_image_candidate(kb: &KnowledgeBase, entity: &EntityId, mode: Pairing) -> Result<Option<usize>> {
    let e = kb
        .entity(entity)
        .ok_or_else(|| Error::Data(format!("unknown entity {entity}")))?;
    if e.glosses.is_empty() {
        return Ok(None);
    }
    Ok(Some(pick(e.glosses.len(), mode, entity)))
}

fn text_evidence(kb: &KnowledgeBase, entity: usize, gloss: usize) -> EvidenceText {
    EvidenceText {
        gloss_index: gloss,
        text: kb.entities()[entity].glosses[gloss].clone(),
    }
}

fn image_evidence(kb: &KnowledgeBase, image_id: &str) -> Option<EvidenceImage> {
    kb.vectors().get(image_id).map(|v| EvidenceImage {
        image_id: image_id.to_string(),
        vec: v.to_vec(),
    })
}

/// Stage-1 candidates for one query. Text-channel entities come first in
/// text rank order, then image-only entities in image rank order.
pub fn retrieve_candidates(
    kb: &KnowledgeBase,
    indices: &Indices,
    query: &QueryPair,
    cfg: &RetrievalConfig,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    // hits arrive best first, so the first hit seen per entity is its best
    let mut text_best: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen_text: HashSet<usize> = HashSet::new();
    for h in indices.text.search(&query.text, cfg.n_texts) {
        if seen_text.insert(h.entity) {
            text_best.push((h.entity, h.gloss, h.score));
        }
    }

    let mut image_best: Vec<(usize, String, f64)> = Vec::new();
    let mut image_pos: HashMap<usize, usize> = HashMap::new();
    if !indices.image.is_empty() {
        for h in indices.image.search(&query.image_vec, cfg.m_images)? {
            let Some(owner) = kb.image_owner(&h.image_id) else {
                continue;
            };
            let ei = kb.entity_index(&owner.id).expect("owner in kb");
            if let std::collections::hash_map::Entry::Vacant(v) = image_pos.entry(ei) {
                v.insert(image_best.len());
                image_best.push((ei, h.image_id, h.similarity as f64));
            }
        }
    }

    let mut out = Vec::with_capacity(text_best.len() + image_best.len());
    for &(ei, gloss, score) in &text_best {
        let entity = &kb.entities()[ei];
        let (evidence_image, channel, image_score) = match image_pos.get(&ei) {
            Some(&p) => {
                let (_, id, sim) = &image_best[p];
                (image_evidence(kb, id), Channel::Both, Some(*sim))
            }
            None => {
                let paired = pair_text_candidate(kb, &entity.id, cfg.pairing)?;
                (paired.and_then(|id| image_evidence(kb, id)), Channel::Text, None)
            }
        };
        out.push(Candidate {
            entity_id: entity.id.clone(),
            evidence_text: Some(text_evidence(kb, ei, gloss)),
            evidence_image,
            channel,
            retrieval_score: score,
            text_score: Some(score),
            image_score,
        });
    }
    for (ei, id, sim) in image_best {
        if seen_text.contains(&ei) {
            continue;
        }
        let entity = &kb.entities()[ei];
        let gloss = pair_image_candidate(kb, &entity.id, cfg.pairing)?;
        out.push(Candidate {
            entity_id: entity.id.clone(),
            evidence_text: gloss.map(|g| text_evidence(kb, ei, g)),
            evidence_image: image_evidence(kb, &id),
            channel: Channel::Image,
            retrieval_score: sim,
            text_score: None,
            image_score: Some(sim),
        });
    }
    Ok(out)
}

/// One line of a candidate dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub query_id: String,
    pub entity_id: EntityId,
    pub channel: Channel,
    pub gloss_index: Option<usize>,
    pub image_id: Option<String>,
    pub retrieval_score: f64,
    pub text_score: Option<f64>,
    pub image_score: Option<f64>,
}

impl CandidateRecord {
    pub fn new(query_id: &str, c: &Candidate) -> Self {
        Self {
            query_id: query_id.to_string(),
            entity_id: c.entity_id.clone(),
            channel: c.channel,
            gloss_index: c.evidence_text.as_ref().map(|t| t.gloss_index),
            image_id: c.evidence_image.as_ref().map(|i| i.image_id.clone()),
            retrieval_score: c.retrieval_score,
            text_score: c.text_score,
            image_score: c.image_score,
        }
    }

    /// Rebuilds the candidate, resolving evidence ids against `kb`.
    pub fn resolve(&self, kb: &KnowledgeBase) -> Result<Candidate> {
        let ei = kb
            .entity_index(&self.entity_id)
            .ok_or_else(|| Error::Data(format!("candidate entity {} not in KB", self.entity_id)))?;
        let entity = &kb.entities()[ei];
        let evidence_text = match self.gloss_index {
            Some(g) if g < entity.glosses.len() => Some(text_evidence(kb, ei, g)),
            Some(g) => return Err(Error::Data(format!("entity {} has no gloss {g}", self.entity_id))),
            None => None,
        };
        let evidence_image = match &self.image_id {
            Some(id) if entity.image_ids.contains(id) => image_evidence(kb, id),
            Some(id) => return Err(Error::Data(format!("image {id} does not belong to {}", self.entity_id))),
            None => None,
        };
        Ok(Candidate {
            entity_id: self.entity_id.clone(),
            evidence_text,
            evidence_image,
            channel: self.channel,
            retrieval_score: self.retrieval_score,
            text_score: self.text_score,
            image_score: self.image_score,
        })
    }
}

/// Candidates of one query.
pub type QueryCandidates = (String, Vec<Candidate>);

pub fn write_candidates(path: &Path, all: &[QueryCandidates]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, cands) in all {
        for c in cands {
            let line = serde_json::to_string(&CandidateRecord::new(qid, c)).expect("serializable");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a candidate dump, grouping consecutive records by query id.
pub fn read_candidates(path: &Path, kb: &KnowledgeBase) -> Result<Vec<QueryCandidates>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<QueryCandidates> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CandidateRecord = serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
        let c = rec.resolve(kb)?;
        match out.last_mut() {
            Some((q, v)) if *q == rec.query_id => v.push(c),
            _ => out.push((rec.query_id, vec![c])),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Entity, VectorStore};

    fn kb() -> KnowledgeBase {
        let store = VectorStore::from_records(
            2,
            [
                ("a".to_string(), vec![1.0, 0.0]),
                ("b".to_string(), vec![0.0, 1.0]),
                ("c".to_string(), vec![0.7, 0.7]),
            ],
        )
        .unwrap();
        KnowledgeBase::new(
            vec![
                Entity {
                    id: "e1".into(),
                    glosses: vec!["g zero".into(), "g one".into()],
                    image_ids: vec!["a".into(), "b".into(), "c".into()],
                },
                Entity {
                    id: "e2".into(),
                    glosses: vec![],
                    image_ids: vec![],
                },
            ],
            store,
        )
        .unwrap()
    }

    #[test]
    fn first_pairing() {
        let kb = kb();
        assert_eq!(pair_text_candidate(&kb, &"e1".into(), Pairing::First).unwrap(), Some("a"));
        assert_eq!(pair_image_candidate(&kb, &"e1".into(), Pairing::First).unwrap(), Some(0));
        assert_eq!(pair_text_candidate(&kb, &"e2".into(), Pairing::First).unwrap(), None);
        assert_eq!(pair_image_candidate(&kb, &"e2".into(), Pairing::Random(3)).unwrap(), None);
        assert!(pair_text_candidate(&kb, &"nope".into(), Pairing::First).is_err());
    }

    #[test]
    fn pairing_parse() {
        assert_eq!("first".parse::<Pairing>().unwrap(), Pairing::First);
        assert_eq!("random:9".parse::<Pairing>().unwrap(), Pairing::Random(9));
        assert!("random".parse::<Pairing>().is_err());
        assert_eq!(Pairing::Random(9).to_string(), "random:9");
    }

    #[test]
    fn single_entity_bound() {
        let kb = kb();
        let idx = Indices::build(&kb, Bm25Params::default(), HnswParams::default()).unwrap();
        let q = QueryPair {
            query_id: "q".into(),
            text: "g zero".into(),
            image_id: "qi".into(),
            image_vec: vec![1.0, 0.1],
            gold: None,
        };
        let c = retrieve_candidates(&kb, &idx, &q, &RetrievalConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].channel, Channel::Both);
        assert_eq!(c[0].evidence_text.as_ref().unwrap().gloss_index, 0);
        assert_eq!(c[0].evidence_image.as_ref().unwrap().image_id, "a");
    }
}
