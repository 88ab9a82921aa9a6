//! Stage functions shared by the CLI commands and [`run_full`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::SynthMkb;
use crate::error::{Error, Result};
use crate::fusion::{
    evaluate, evaluate_channel, grid_search_weights, score_query, score_query_assembled, FusionWeights, GridResult,
    ScoredQuery,
};
use crate::kb::{load_kb, load_splits, save_kb, save_splits, KnowledgeBase, QueryPair, Splits};
use crate::matchers::{MatcherKind, ScorerBindings};
use crate::report::{AssembleTable, MainTable};
use crate::retrieval::{retrieve_candidates, Channel, Indices, QueryCandidates, RetrievalConfig};
use crate::text_index::TextIndex;
use crate::vector_index::HnswIndex;

pub const TEXT_INDEX_FILE: &str = "text.mtix";
pub const IMAGE_INDEX_FILE: &str = "image.mann";

pub fn candidates_file(split: &str) -> String {
    format!("candidates-{split}.jsonl")
}

pub fn scores_file(split: &str) -> String {
    format!("scores-{split}.jsonl")
}

pub fn assembled_scores_file(split: &str) -> String {
    format!("scores-assembled-{split}.jsonl")
}

pub const WEIGHTS_FILE: &str = "weights.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const MISSES_FILE: &str = "misses.jsonl";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_TEXT_FILE: &str = "ablation.txt";
pub const ASSEMBLE_FILE: &str = "assemble.json";
pub const ASSEMBLE_TEXT_FILE: &str = "assemble.txt";

/// Fails with a data error naming `path` when it does not exist.
pub fn require(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Data(format!("required input {} does not exist", path.display())))
    }
}

/// Writes the synthetic KB, splits, joint vectors and lexicon where `cfg`
/// points.
pub fn save_synth(s: &SynthMkb, cfg: &RunConfig) -> Result<()> {
    for d in [&cfg.kb_dir, &cfg.splits_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for f in [&cfg.joint_vectors, &cfg.lexicon] {
        if let Some(p) = f.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    save_kb(&s.kb, &cfg.kb_dir)?;
    save_splits(&s.splits, s.kb.dim(), &cfg.splits_dir)?;
    s.joint.save(&cfg.joint_vectors)?;
    s.lexicon.save(&cfg.lexicon)
}

pub fn load_data(cfg: &RunConfig) -> Result<(KnowledgeBase, Splits)> {
    let kb = load_kb(&cfg.kb_dir)?;
    let splits = load_splits(&cfg.splits_dir, &kb)?;
    Ok((kb, splits))
}

/// Loads persisted indices from `out_dir`.
pub fn load_indices(cfg: &RunConfig) -> Result<Indices> {
    Ok(Indices {
        text: TextIndex::load(&require(&cfg.out_dir.join(TEXT_INDEX_FILE))?)?,
        image: HnswIndex::load(&require(&cfg.out_dir.join(IMAGE_INDEX_FILE))?)?,
    })
}

/// Candidates for every query, in query order.
pub fn retrieve_split(
    kb: &KnowledgeBase,
    indices: &Indices,
    queries: &[QueryPair],
    cfg: &RetrievalConfig,
) -> Result<Vec<QueryCandidates>> {
    queries
        .par_iter()
        .map(|q| Ok((q.query_id.clone(), retrieve_candidates(kb, indices, q, cfg)?)))
        .collect()
}

fn check_aligned(queries: &[QueryPair], cands: &[QueryCandidates]) -> Result<()> {
    // queries without any candidate have no lines in a dump
    let mut it = cands.iter().peekable();
    for q in queries {
        if let Some((id, _)) = it.peek() {
            if *id == q.query_id {
                it.next();
            }
        }
    }
    match it.next() {
        None => Ok(()),
        Some((id, _)) => Err(Error::Data(format!("candidate query {id} not in split or out of order"))),
    }
}

fn candidates_for<'a>(queries: &'a [QueryPair], cands: &'a [QueryCandidates]) -> Result<Vec<(&'a QueryPair, &'a [crate::retrieval::Candidate])>> {
    check_aligned(queries, cands)?;
    let mut it = cands.iter().peekable();
    Ok(queries
        .iter()
        .map(|q| match it.peek() {
            Some((id, c)) if *id == q.query_id => {
                it.next();
                (q, c.as_slice())
            }
            _ => (q, &[][..]),
        })
        .collect())
}

/// Scores every query's candidates. Queries run in parallel; each query
/// sends one batch per matcher.
pub fn score_split(queries: &[QueryPair], cands: &[QueryCandidates], b: &ScorerBindings) -> Result<Vec<ScoredQuery>> {
    candidates_for(queries, cands)?
        .into_par_iter()
        .map(|(q, c)| score_query(q, c, b))
        .collect()
}

pub fn score_split_assembled(
    queries: &[QueryPair],
    cands: &[QueryCandidates],
    k: usize,
    b: &ScorerBindings,
    kb: &KnowledgeBase,
) -> Result<Vec<ScoredQuery>> {
    candidates_for(queries, cands)?
        .into_par_iter()
        .map(|(q, c)| score_query_assembled(q, c, k, b, kb))
        .collect()
}

pub fn main_table(queries: &[ScoredQuery], full: &FusionWeights) -> Result<MainTable> {
    let one = |k| evaluate(queries, &FusionWeights::one_hot(k, 1.0));
    Ok(MainTable {
        text: evaluate_channel(queries, Channel::Text)?,
        image: evaluate_channel(queries, Channel::Image)?,
        tbm: one(MatcherKind::Tbm)?,
        tcm: one(MatcherKind::Tcm)?,
        ibm: one(MatcherKind::Ibm)?,
        clip: one(MatcherKind::Clip)?,
        full: evaluate(queries, full)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Weights used for the Full Model rows.
    pub weights: FusionWeights,
    /// Grid search outcome; absent when weights were given.
    pub tuning: Option<GridResult>,
    pub dev: MainTable,
    pub test: MainTable,
}

/// Tunes on dev unless `fixed` is given, then evaluates both splits.
pub fn build_report(
    dev: &[ScoredQuery],
    test: &[ScoredQuery],
    grid: &[f64],
    fixed: Option<FusionWeights>,
) -> Result<RunReport> {
    let (weights, tuning) = match fixed {
        Some(w) => (w, None),
        None => {
            let g = grid_search_weights(dev, grid)?;
            (g.weights, Some(g))
        }
    };
    Ok(RunReport {
        weights,
        tuning,
        dev: main_table(dev, &weights)?,
        test: main_table(test, &weights)?,
    })
}

pub fn assemble_table(
    plain_test: &[ScoredQuery],
    asm_test: &[ScoredQuery],
    plain_w: &FusionWeights,
    asm_w: &FusionWeights,
) -> Result<AssembleTable> {
    let col = |qs: &[ScoredQuery], w: &FusionWeights| -> Result<[crate::fusion::HitsReport; 5]> {
        let one = |k| evaluate(qs, &FusionWeights::one_hot(k, 1.0));
        Ok([
            one(MatcherKind::Tbm)?,
            one(MatcherKind::Tcm)?,
            one(MatcherKind::Ibm)?,
            one(MatcherKind::Clip)?,
            evaluate(qs, w)?,
        ])
    };
    Ok(AssembleTable {
        plain: col(plain_test, plain_w)?,
        assembled: col(asm_test, asm_w)?,
    })
}

/// Scored dev and test splits.
pub struct Scored {
    pub dev: Vec<ScoredQuery>,
    pub test: Vec<ScoredQuery>,
}

/// Index, retrieve and score dev and test in memory.
pub fn score_in_process(cfg: &RunConfig, kb: &KnowledgeBase, splits: &Splits) -> Result<Scored> {
    let indices = Indices::build(kb, cfg.bm25(), cfg.hnsw())?;
    let b = cfg.bindings()?;
    let r = cfg.retrieval();
    let dev_c = retrieve_split(kb, &indices, &splits.dev, &r)?;
    let test_c = retrieve_split(kb, &indices, &splits.test, &r)?;
    Ok(Scored {
        dev: score_split(&splits.dev, &dev_c, &b)?,
        test: score_split(&splits.test, &test_c, &b)?,
    })
}

/// The whole retrieve → score → tune → eval chain in one process, reading
/// the KB and splits from `cfg`.
pub fn run_full(cfg: &RunConfig) -> Result<RunReport> {
    let (kb, splits) = load_data(cfg)?;
    let s = score_in_process(cfg, &kb, &splits)?;
    build_report(&s.dev, &s.test, &cfg.grid, cfg.weights.map(FusionWeights))
}
