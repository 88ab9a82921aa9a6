use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EntityId, KnowledgeBase, VectorStore};
use crate::error::{Error, Result};

pub const SPLITS_FILE: &str = "splits.jsonl";
pub const QUERY_VECTORS_FILE: &str = "queries.mvec";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// A `(text, image)` query with its optional gold entity.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPair {
    pub query_id: String,
    pub text: String,
    pub image_id: String,
    pub image_vec: Vec<f32>,
    pub gold: Option<EntityId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub kb_entities: Vec<EntityId>,
    pub train: Vec<QueryPair>,
    pub dev: Vec<QueryPair>,
    pub test: Vec<QueryPair>,
}

impl Splits {
    pub fn get(&self, split: SplitName) -> &[QueryPair] {
        match split {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: SplitName) -> &mut Vec<QueryPair> {
        match split {
            SplitName::Train => &mut self.train,
            SplitName::Dev => &mut self.dev,
            SplitName::Test => &mut self.test,
        }
    }

    /// Vector store holding every query image across the three splits.
    pub fn query_vectors(&self, dim: usize) -> Result<VectorStore> {
        VectorStore::from_records(
            dim,
            SplitName::ALL
                .iter()
                .flat_map(|&s| self.get(s))
                .map(|q| (q.image_id.clone(), q.image_vec.clone())),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    split: SplitName,
    query_id: String,
    text: String,
    image_id: String,
    gold: Option<EntityId>,
}

/// Writes `splits.jsonl` (train, dev, test in order) and `queries.mvec`.
pub fn save_splits(splits: &Splits, dim: usize, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SPLITS_FILE);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for split in SplitName::ALL {
        for q in splits.get(split) {
            let line = SplitLine {
                split,
                query_id: q.query_id.clone(),
                text: q.text.clone(),
                image_id: q.image_id.clone(),
                gold: q.gold.clone(),
            };
            let s = serde_json::to_string(&line).expect("split line serializes");
            writeln!(w, "{s}").map_err(|e| Error::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    splits.query_vectors(dim)?.save(&dir.join(QUERY_VECTORS_FILE))
}

/// Reads splits from `dir`; `kb_entities` is taken from `kb`.
pub fn load_splits(dir: &Path, kb: &KnowledgeBase) -> Result<Splits> {
    let path = dir.join(SPLITS_FILE);
    let vectors = VectorStore::load(&dir.join(QUERY_VECTORS_FILE))?;
    if !vectors.is_empty() && vectors.dim() != kb.dim() {
        return Err(Error::Data(format!(
            "query vectors have dim {} but the KB has dim {}",
            vectors.dim(),
            kb.dim()
        )));
    }
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut splits = Splits {
        kb_entities: kb.entities().iter().map(|e| e.id.clone()).collect(),
        ..Default::default()
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SplitLine =
            serde_json::from_str(&line).map_err(|e| Error::malformed(&path, i + 1, e))?;
        let image_vec = vectors
            .get(&rec.image_id)
            .ok_or_else(|| Error::malformed(&path, i + 1, format!("no vector for image {}", rec.image_id)))?
            .to_vec();
        splits.get_mut(rec.split).push(QueryPair {
            query_id: rec.query_id,
            text: rec.text,
            image_id: rec.image_id,
            image_vec,
            gold: rec.gold,
        });
    }
    Ok(splits)
}
