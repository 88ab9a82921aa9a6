//! Stage-2 ranking: linear fusion, weight tuning, assembling and Hits@N.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, QueryPair};
use crate::matchers::{score_evidence, EvidenceSet, ImageRef, MatcherKind, ScoreVector, ScorerBindings};
use crate::retrieval::{Candidate, Channel};

pub const DEFAULT_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const HITS_AT: [usize; 4] = [1, 3, 10, 100];

/// Non-negative weight per matcher, in kind order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(pub [f64; 4]);

impl FusionWeights {
    pub fn one_hot(kind: MatcherKind, value: f64) -> Self {
        let mut w = [0.0; 4];
        w[kind.index()] = value;
        Self(w)
    }

    pub fn get(&self, kind: MatcherKind) -> f64 {
        self.0[kind.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("fusion weights must be finite and non-negative: {:?}", self.0)));
        }
        if self.0.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("fusion weights are all zero".into()));
        }
        Ok(())
    }
}

#[inline]
fn dot(w: &[f64; 4], s: &[f64; 4]) -> f64 {
    let mut acc = 0.0;
    for k in 0..4 {
        acc += w[k] * s[k];
    }
    acc
}

pub fn fuse(scores: &ScoreVector, w: &FusionWeights) -> Result<f64> {
    w.validate()?;
    Ok(dot(&w.0, &scores.scores))
}

/// A scored candidate as stored in the score cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub entity_id: EntityId,
    pub channel: Channel,
    pub text_score: Option<f64>,
    pub image_score: Option<f64>,
    pub scores: ScoreVector,
}

impl ScoredCandidate {
    pub fn new(c: &Candidate, scores: ScoreVector) -> Self {
        Self {
            entity_id: c.entity_id.clone(),
            channel: c.channel,
            text_score: c.text_score,
            image_score: c.image_score,
            scores,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuery {
    pub query_id: String,
    pub gold: Option<EntityId>,
    pub candidates: Vec<ScoredCandidate>,
}

/// Scores one query's candidates with their single evidence pair.
pub fn score_query(query: &QueryPair, candidates: &[Candidate], b: &ScorerBindings) -> Result<ScoredQuery> {
    let sets: Vec<EvidenceSet<'_>> = candidates.iter().map(EvidenceSet::of).collect();
    finish(query, candidates, score_evidence(query, &sets, b)?)
}

/// Scores one query's candidates over up to `k` instances per modality.
pub fn score_query_assembled(
    query: &QueryPair,
    candidates: &[Candidate],
    k: usize,
    b: &ScorerBindings,
    kb: &KnowledgeBase,
) -> Result<ScoredQuery> {
    let sets = candidates
        .iter()
        .map(|c| assembled_set(c, k, kb))
        .collect::<Result<Vec<_>>>()?;
    finish(query, candidates, score_evidence(query, &sets, b)?)
}

fn finish(query: &QueryPair, candidates: &[Candidate], scores: Vec<ScoreVector>) -> Result<ScoredQuery> {
    Ok(ScoredQuery {
        query_id: query.query_id.clone(),
        gold: query.gold.clone(),
        candidates: candidates
            .iter()
            .zip(scores)
            .map(|(c, s)| ScoredCandidate::new(c, s))
            .collect(),
    })
}

/// The retrieved/paired instance followed by the first `k-1` other KB-side
/// instances of the entity in stored order.
pub fn assembled_set<'a>(c: &'a Candidate, k: usize, kb: &'a KnowledgeBase) -> Result<EvidenceSet<'a>> {
    if k == 0 {
        return Err(Error::Config("assembling needs k >= 1".into()));
    }
    let entity = kb
        .entity(&c.entity_id)
        .ok_or_else(|| Error::Data(format!("candidate entity {} not in KB", c.entity_id)))?;
    let mut set = EvidenceSet::of(c);
    if let Some(t) = &c.evidence_text {
        set.texts.extend(
            entity
                .glosses
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != t.gloss_index)
                .map(|(_, g)| g.as_str())
                .take(k - 1),
        );
    }
    if let Some(img) = &c.evidence_image {
        for id in entity.image_ids.iter().filter(|id| **id != img.image_id).take(k - 1) {
            let vec = kb
                .vectors()
                .get(id)
                .ok_or_else(|| Error::Data(format!("image {id} of {} has no vector", c.entity_id)))?;
            set.images.push(ImageRef { image_id: id, vec });
        }
    }
    Ok(set)
}

/// Scores one candidate over `k` instances.
pub fn assemble_scores(
    query: &QueryPair,
    candidate: &Candidate,
    k: usize,
    b: &ScorerBindings,
    kb: &KnowledgeBase,
) -> Result<ScoreVector> {
    let set = assembled_set(candidate, k, kb)?;
    Ok(score_evidence(query, &[set], b)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(EntityId, f64)>,
}

impl RankedList {
    /// 1-based rank of `entity`.
    pub fn rank_of(&self, entity: &EntityId) -> Option<usize> {
        self.entries.iter().position(|(e, _)| e == entity).map(|p| p + 1)
    }
}

fn sort_ranked(entries: &mut [(EntityId, f64)]) {
    entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
}

/// Entities by fused score, descending, ties by entity id. Duplicate
/// entities keep their best fused score.
pub fn rank_entities(query_id: &str, candidates: &[ScoredCandidate], w: &FusionWeights) -> Result<RankedList> {
    w.validate()?;
    let mut best: BTreeMap<&EntityId, f64> = BTreeMap::new();
    for c in candidates {
        let f = dot(&w.0, &c.scores.scores);
        best.entry(&c.entity_id).and_modify(|b| *b = b.max(f)).or_insert(f);
    }
    let mut entries: Vec<(EntityId, f64)> = best.into_iter().map(|(e, f)| (e.clone(), f)).collect();
    sort_ranked(&mut entries);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries,
    })
}

/// Stage-1 ranking of one channel: entities hit by that channel ordered by
/// their retrieval score.
pub fn channel_ranking(q: &ScoredQuery, channel: Channel) -> RankedList {
    let mut entries: Vec<(EntityId, f64)> = q
        .candidates
        .iter()
        .filter_map(|c| {
            let s = match channel {
                Channel::Text => c.text_score,
                Channel::Image => c.image_score,
                Channel::Both => c.text_score.zip(c.image_score).map(|(a, b)| a.max(b)),
            }?;
            Some((c.entity_id.clone(), s))
        })
        .collect();
    sort_ranked(&mut entries);
    entries.dedup_by(|a, b| a.0 == b.0);
    RankedList {
        query_id: q.query_id.clone(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitsReport {
    pub queries: usize,
    /// `(n, percentage)` in increasing `n`.
    pub hits: Vec<(usize, f64)>,
}

impl HitsReport {
    pub fn at(&self, n: usize) -> Option<f64> {
        self.hits.iter().find(|(k, _)| *k == n).map(|(_, v)| *v)
    }

    fn from_ranks(ranks: &[Option<usize>], n_values: &[usize]) -> Self {
        let mut ns = n_values.to_vec();
        ns.sort_unstable();
        ns.dedup();
        let q = ranks.len();
        let hits = ns
            .into_iter()
            .map(|n| {
                let c = ranks.iter().filter(|r| matches!(r, Some(r) if *r <= n)).count();
                (n, if q == 0 { 0.0 } else { 100.0 * c as f64 / q as f64 })
            })
            .collect();
        Self { queries: q, hits }
    }
}

/// Hits@N over `(ranking, gold)` pairs.
pub fn hits_at_n(ranked: &[(RankedList, Option<EntityId>)], n_values: &[usize]) -> Result<HitsReport> {
    let ranks = ranked
        .iter()
        .map(|(r, gold)| {
            let gold = gold
                .as_ref()
                .ok_or_else(|| Error::Data(format!("query {} has no gold entity", r.query_id)))?;
            Ok(r.rank_of(gold))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HitsReport::from_ranks(&ranks, n_values))
}

/// Ranks every query with `w` and reports Hits@{1,3,10,100}.
pub fn evaluate(queries: &[ScoredQuery], w: &FusionWeights) -> Result<HitsReport> {
    let ranked = queries
        .iter()
        .map(|q| Ok((rank_entities(&q.query_id, &q.candidates, w)?, q.gold.clone())))
        .collect::<Result<Vec<_>>>()?;
    hits_at_n(&ranked, &HITS_AT)
}

pub fn evaluate_channel(queries: &[ScoredQuery], channel: Channel) -> Result<HitsReport> {
    let ranked: Vec<_> = queries
        .iter()
        .map(|q| (channel_ranking(q, channel), q.gold.clone()))
        .collect();
    hits_at_n(&ranked, &HITS_AT)
}

/// One query with candidates grouped per entity in entity-id order.
struct Prepared {
    groups: Vec<Vec<[f64; 4]>>,
    gold: Option<usize>,
}

impl Prepared {
    fn new(q: &ScoredQuery) -> Result<Self> {
        let gold = q
            .gold
            .as_ref()
            .ok_or_else(|| Error::Data(format!("query {} has no gold entity", q.query_id)))?;
        let mut by: BTreeMap<&EntityId, Vec<[f64; 4]>> = BTreeMap::new();
        for c in &q.candidates {
            by.entry(&c.entity_id).or_default().push(c.scores.scores);
        }
        let gold = by.keys().position(|e| *e == gold);
        Ok(Self {
            groups: by.into_values().collect(),
            gold,
        })
    }

    /// Same rank `rank_entities` would give the gold entity.
    fn gold_rank(&self, w: &[f64; 4]) -> Option<usize> {
        let g = self.gold?;
        let best = |grp: &Vec<[f64; 4]>| grp.iter().map(|s| dot(w, s)).fold(f64::NEG_INFINITY, f64::max);
        let gs = best(&self.groups[g]);
        let mut rank = 1;
        for (i, grp) in self.groups.iter().enumerate() {
            if i == g {
                continue;
            }
            let f = best(grp);
            if f > gs || (f == gs && i < g) {
                rank += 1;
            }
        }
        Some(rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub weights: FusionWeights,
    pub dev: HitsReport,
    /// Number of weight tuples evaluated.
    pub evaluated: u64,
}

/// Exhaustive search over `grid` for the weights of the `active` matchers;
/// inactive matchers get weight zero. Maximises dev Hits@1, then Hits@3,
/// then Hits@10, then prefers the lexicographically smallest tuple.
pub fn grid_search_subset(dev: &[ScoredQuery], grid: &[f64], active: &[MatcherKind]) -> Result<GridResult> {
    if dev.is_empty() {
        return Err(Error::Data("grid search needs a non-empty dev set".into()));
    }
    if active.is_empty() {
        return Err(Error::Config("grid search needs at least one matcher".into()));
    }
    let mut grid = grid.to_vec();
    if grid.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Config(format!("grid values must be finite and non-negative: {grid:?}")));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    grid.dedup();
    let mut kinds = active.to_vec();
    kinds.sort();
    kinds.dedup();

    let prepared = dev.iter().map(Prepared::new).collect::<Result<Vec<_>>>()?;
    let g = grid.len() as u64;
    let total = g.pow(kinds.len() as u32);

    let tuple = |mut idx: u64| {
        let mut w = [0.0; 4];
        for k in kinds.iter().rev() {
            w[k.index()] = grid[(idx % g) as usize];
            idx /= g;
        }
        w
    };

    // (h1, h3, h10, -idx) compared lexicographically; idx order is
    // lexicographic tuple order
    let best = (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let w = tuple(idx);
            if w.iter().all(|&x| x == 0.0) {
                return None;
            }
            let mut h = [0u32; 3];
            for p in &prepared {
                if let Some(r) = p.gold_rank(&w) {
                    h[0] += (r <= 1) as u32;
                    h[1] += (r <= 3) as u32;
                    h[2] += (r <= 10) as u32;
                }
            }
            Some((h, idx, 1u64))
        })
        .reduce_with(|a, b| {
            let n = a.2 + b.2;
            let pick = match a.0.cmp(&b.0) {
                Ordering::Greater => a,
                Ordering::Less => b,
                Ordering::Equal if a.1 <= b.1 => a,
                Ordering::Equal => b,
            };
            (pick.0, pick.1, n)
        })
        .ok_or_else(|| Error::Config("grid has no non-zero tuple".into()))?;

    let weights = FusionWeights(tuple(best.1));
    Ok(GridResult {
        dev: evaluate(dev, &weights)?,
        weights,
        evaluated: best.2,
    })
}

pub fn grid_search_weights(dev: &[ScoredQuery], grid: &[f64]) -> Result<GridResult> {
    grid_search_subset(dev, grid, &MatcherKind::ALL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub weights: FusionWeights,
    pub test: HitsReport,
}

/// Full model and each leave-one-out subset, tuned on dev and evaluated on
/// test. Rows follow the ablation table order.
pub fn run_ablation(dev: &[ScoredQuery], test: &[ScoredQuery], grid: &[f64]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    let full = grid_search_weights(dev, grid)?;
    rows.push(AblationRow {
        label: "Full Model".into(),
        weights: full.weights,
        test: evaluate(test, &full.weights)?,
    });
    for drop in [MatcherKind::Ibm, MatcherKind::Clip, MatcherKind::Tbm, MatcherKind::Tcm] {
        let kinds: Vec<_> = MatcherKind::ALL.into_iter().filter(|k| *k != drop).collect();
        let r = grid_search_subset(dev, grid, &kinds)?;
        rows.push(AblationRow {
            label: format!("w/o {drop}"),
            weights: r.weights,
            test: evaluate(test, &r.weights)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Miss {
    pub query_id: String,
    pub gold: EntityId,
    pub gold_rank: Option<usize>,
    pub predicted: Option<EntityId>,
}

/// Queries whose gold entity is not ranked first.
pub fn miss_list(queries: &[ScoredQuery], w: &FusionWeights) -> Result<Vec<Miss>> {
    let mut out = Vec::new();
    for q in queries {
        let gold = q
            .gold
            .clone()
            .ok_or_else(|| Error::Data(format!("query {} has no gold entity", q.query_id)))?;
        let r = rank_entities(&q.query_id, &q.candidates, w)?;
        let rank = r.rank_of(&gold);
        if rank != Some(1) {
            out.push(Miss {
                query_id: q.query_id.clone(),
                gold,
                gold_rank: rank,
                predicted: r.entries.first().map(|(e, _)| e.clone()),
            });
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for it in items {
        let line = serde_json::to_string(it).expect("serializable");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?);
    }
    Ok(out)
}

/// Score cache: one [`ScoredQuery`] per line.
pub fn write_score_cache(path: &Path, queries: &[ScoredQuery]) -> Result<()> {
    write_jsonl(path, queries)
}

pub fn read_score_cache(path: &Path) -> Result<Vec<ScoredQuery>> {
    read_jsonl(path)
}
