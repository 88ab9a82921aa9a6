//! Term-based gloss retrieval: tokenizer, inverted index and Okapi BM25.
//!
//! One gloss is one document. Scoring uses
//!
//! ```text
//! score(d, q) = Σ_{t ∈ q} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! IDF(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! The `+1` inside the logarithm keeps every IDF positive, so scores are
//! non-negative and any document sharing a term with the query scores > 0.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};

pub const MTIX_MAGIC: &[u8; 4] = b"MTIX";
pub const MTIX_VERSION: u32 = 1;

/// Lowercases and splits on every non-alphanumeric scalar. No stemming, no
/// stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("bm25 k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("bm25 b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Location of a gloss document: owning entity and gloss position.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocRef {
    pub entity_id: EntityId,
    pub gloss_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    pub term: String,
    /// `(doc, tf)` sorted by doc ascending.
    pub postings: Vec<(u32, u32)>,
}

impl PostingList {
    pub fn document_frequency(&self) -> usize {
        self.postings.len()
    }

    fn tf(&self, doc: u32) -> u32 {
        self.postings
            .binary_search_by_key(&doc, |&(d, _)| d)
            .map(|i| self.postings[i].1)
            .unwrap_or(0)
    }
}

/// A scored gloss document. `doc` orders like [`DocRef`] because entities are
/// numbered in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TextHit {
    pub doc: u32,
    pub entity: usize,
    pub gloss: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextIndex {
    params: Bm25Params,
    entity_ids: Vec<EntityId>,
    /// `(entity index, gloss index)` per doc.
    docs: Vec<(u32, u32)>,
    doc_len: Vec<u32>,
    avgdl: f64,
    /// Sorted by term.
    postings: Vec<PostingList>,
    lookup: HashMap<String, usize>,
}

impl TextIndex {
    pub fn build(kb: &KnowledgeBase, params: Bm25Params) -> Self {
        let mut docs = Vec::new();
        let mut texts = Vec::new();
        for (ei, e) in kb.entities().iter().enumerate() {
            for (gi, g) in e.glosses.iter().enumerate() {
                docs.push((ei as u32, gi as u32));
                texts.push(g.as_str());
            }
        }
        let counted: Vec<(u32, BTreeMap<String, u32>)> = texts
            .par_iter()
            .map(|t| {
                let toks = tokenize(t);
                let mut tf = BTreeMap::new();
                for tok in &toks {
                    *tf.entry(tok.clone()).or_insert(0u32) += 1;
                }
                (toks.len() as u32, tf)
            })
            .collect();

        let mut merged: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_len = Vec::with_capacity(counted.len());
        for (doc, (len, tf)) in counted.into_iter().enumerate() {
            doc_len.push(len);
            for (term, n) in tf {
                merged.entry(term).or_default().push((doc as u32, n));
            }
        }
        let postings: Vec<PostingList> = merged
            .into_iter()
            .map(|(term, postings)| PostingList { term, postings })
            .collect();
        Self::assemble(
            params,
            kb.entities().iter().map(|e| e.id.clone()).collect(),
            docs,
            doc_len,
            postings,
        )
    }

    fn assemble(
        params: Bm25Params,
        entity_ids: Vec<EntityId>,
        docs: Vec<(u32, u32)>,
        doc_len: Vec<u32>,
        postings: Vec<PostingList>,
    ) -> Self {
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = if doc_len.is_empty() {
            0.0
        } else {
            total as f64 / doc_len.len() as f64
        };
        let lookup = postings
            .iter()
            .enumerate()
            .map(|(i, p)| (p.term.clone(), i))
            .collect();
        Self {
            params,
            entity_ids,
            docs,
            doc_len,
            avgdl,
            postings,
            lookup,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.postings.iter().map(|p| p.term.as_str())
    }

    pub fn posting_list(&self, term: &str) -> Option<&PostingList> {
        self.lookup.get(term).map(|&i| &self.postings[i])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.posting_list(term).map_or(0, |p| p.document_frequency())
    }

    pub fn doc_len(&self, doc: u32) -> Option<u32> {
        self.doc_len.get(doc as usize).copied()
    }

    pub fn doc_ref(&self, doc: u32) -> Option<DocRef> {
        let &(e, g) = self.docs.get(doc as usize)?;
        Some(DocRef {
            entity_id: self.entity_ids[e as usize].clone(),
            gloss_index: g as usize,
        })
    }

    /// Doc number for a `(entity, gloss)` reference.
    pub fn doc_of(&self, r: &DocRef) -> Option<u32> {
        let e = self.entity_ids.binary_search(&r.entity_id).ok()? as u32;
        self.docs
            .binary_search(&(e, r.gloss_index as u32))
            .ok()
            .map(|d| d as u32)
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.docs.len(), self.document_frequency(term))
    }

    fn term_weight(&self, tf: u32, len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avgdl > 0.0 {
            1.0 - b + b * len as f64 / self.avgdl
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document; terms absent from the document add 0.
    pub fn bm25_score(&self, query_terms: &[String], doc: u32) -> Result<f64> {
        let len = self
            .doc_len(doc)
            .ok_or_else(|| Error::Data(format!("unknown document {doc}")))?;
        let mut score = 0.0;
        for t in query_terms {
            if let Some(p) = self.posting_list(t) {
                let tf = p.tf(doc);
                if tf > 0 {
                    score += idf(self.docs.len(), p.document_frequency()) * self.term_weight(tf, len);
                }
            }
        }
        Ok(score)
    }

    /// Top-`n` documents by BM25, descending, ties by doc ascending. Only
    /// documents with a positive score are returned.
    pub fn search(&self, query_text: &str, n: usize) -> Vec<TextHit> {
        let terms = tokenize(query_text);
        self.search_terms(&terms, n)
    }

    pub fn search_terms(&self, terms: &[String], n: usize) -> Vec<TextHit> {
        if n == 0 || self.docs.is_empty() {
            return Vec::new();
        }
        let mut acc = vec![0.0f64; self.docs.len()];
        let mut touched = Vec::new();
        for t in terms {
            let Some(p) = self.posting_list(t) else { continue };
            let idf = idf(self.docs.len(), p.document_frequency());
            for &(doc, tf) in &p.postings {
                let slot = &mut acc[doc as usize];
                if *slot == 0.0 {
                    touched.push(doc);
                }
                *slot += idf * self.term_weight(tf, self.doc_len[doc as usize]);
            }
        }
        let mut scored: Vec<(u32, f64)> = touched
            .into_iter()
            .map(|d| (d, acc[d as usize]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if scored.len() > n {
            scored.select_nth_unstable_by(n - 1, cmp);
            scored.truncate(n);
        }
        scored.sort_by(cmp);
        scored
            .into_iter()
            .map(|(doc, score)| {
                let (e, g) = self.docs[doc as usize];
                TextHit {
                    doc,
                    entity: e as usize,
                    gloss: g as usize,
                    score,
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MTIX_MAGIC);
        out.extend_from_slice(&MTIX_VERSION.to_le_bytes());
        out.extend_from_slice(&self.params.k1.to_le_bytes());
        out.extend_from_slice(&self.params.b.to_le_bytes());
        out.extend_from_slice(&(self.entity_ids.len() as u64).to_le_bytes());
        for id in &self.entity_ids {
            put_str(&mut out, id.as_str());
        }
        out.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for (&(e, g), &len) in self.docs.iter().zip(&self.doc_len) {
            out.extend_from_slice(&e.to_le_bytes());
            out.extend_from_slice(&g.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
        }
        out.extend_from_slice(&(self.postings.len() as u64).to_le_bytes());
        for p in &self.postings {
            put_str(&mut out, &p.term);
            out.extend_from_slice(&(p.postings.len() as u32).to_le_bytes());
            for &(d, tf) in &p.postings {
                out.extend_from_slice(&d.to_le_bytes());
                out.extend_from_slice(&tf.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MTIX_MAGIC {
            return Err(Error::Data("bad text index magic".into()));
        }
        let version = r.u32()?;
        if version != MTIX_VERSION {
            return Err(Error::Data(format!("unsupported text index version {version}")));
        }
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        let n_entities = r.u64()? as usize;
        let mut entity_ids = Vec::with_capacity(n_entities.min(1 << 24));
        for _ in 0..n_entities {
            entity_ids.push(EntityId::new(r.string()?));
        }
        let n_docs = r.u64()? as usize;
        let mut docs = Vec::with_capacity(n_docs.min(1 << 24));
        let mut doc_len = Vec::with_capacity(n_docs.min(1 << 24));
        for _ in 0..n_docs {
            docs.push((r.u32()?, r.u32()?));
            doc_len.push(r.u32()?);
        }
        let n_terms = r.u64()? as usize;
        let mut postings = Vec::with_capacity(n_terms.min(1 << 24));
        for _ in 0..n_terms {
            let term = r.string()?;
            let df = r.u32()? as usize;
            let mut list = Vec::with_capacity(df);
            for _ in 0..df {
                list.push((r.u32()?, r.u32()?));
            }
            postings.push(PostingList { term, postings: list });
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes in text index".into()));
        }
        Ok(Self::assemble(params, entity_ids, docs, doc_len, postings))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("truncated text index".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Data(e.to_string()))
    }
}
