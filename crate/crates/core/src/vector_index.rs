//! Image retrieval: an HNSW approximate nearest-neighbour graph plus an exact
//! brute-force scan that shares the same similarity and tie rule.
//!
//! Node levels come from a generator seeded by `(seed, image_id)`, and nodes
//! are inserted in image-id order, so a build is a pure function of the store
//! and the parameters.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::VectorStore;

pub const MANN_MAGIC: &[u8; 4] = b"MANN";
pub const MANN_VERSION: u32 = 1;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    InnerProduct,
}

/// Cosine of two vectors, computed in f64.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Data("zero-norm vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    /// Lower bound on the query candidate list; the effective value is
    /// `max(ef_search, 2 * k)`.
    pub ef_search: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0,
            metric: Metric::Cosine,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!("hnsw m must be >= 2, got {}", self.m)));
        }
        if self.ef_construction < self.m {
            return Err(Error::Config(format!(
                "hnsw ef_construction ({}) must be >= m ({})",
                self.ef_construction, self.m
            )));
        }
        Ok(())
    }

    pub fn effective_ef(&self, k: usize) -> usize {
        self.ef_search.max(2 * k).max(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorHit {
    pub image_id: String,
    pub similarity: f32,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Metric-specific preprocessing: unit-normalise for cosine.
fn prepare(metric: Metric, v: &[f32]) -> Vec<f32> {
    match metric {
        Metric::InnerProduct => v.to_vec(),
        Metric::Cosine => {
            let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                v.to_vec()
            } else {
                v.iter().map(|x| (*x as f64 / norm) as f32).collect()
            }
        }
    }
}

fn sort_hits(hits: &mut [(u32, f32)]) {
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Exhaustive top-`m` scan with the same similarity and tie rule as
/// [`HnswIndex::search`].
pub fn exact_knn(store: &VectorStore, metric: Metric, query: &[f32], m: usize) -> Result<Vec<VectorHit>> {
    if query.len() != store.dim() {
        return Err(Error::Data(format!(
            "query dim {} does not match store dim {}",
            query.len(),
            store.dim()
        )));
    }
    let q = prepare(metric, query);
    let mut hits: Vec<(u32, f32)> = (0..store.len())
        .map(|i| (i as u32, dot(&q, &prepare(metric, store.row(i)))))
        .collect();
    sort_hits(&mut hits);
    hits.truncate(m);
    Ok(hits
        .into_iter()
        .map(|(i, s)| VectorHit {
            image_id: store.id(i as usize).to_string(),
            similarity: s,
        })
        .collect())
}

/// Heap entry ordered by similarity, then by node id (lower id = "better").
#[derive(Clone, Copy, PartialEq)]
struct Scored {
    sim: f32,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    ids: Vec<String>,
    /// Prepared vectors, row-major.
    data: Vec<f32>,
    levels: Vec<u8>,
    /// `links[node][layer]`
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
}

impl HnswIndex {
    pub fn build(store: &VectorStore, params: HnswParams) -> Result<Self> {
        params.validate()?;
        let mut index = Self {
            params,
            dim: store.dim(),
            ids: Vec::with_capacity(store.len()),
            data: Vec::with_capacity(store.len() * store.dim()),
            levels: Vec::with_capacity(store.len()),
            links: Vec::with_capacity(store.len()),
            entry: None,
        };
        let mut visited = Visited::new(store.len());
        // store iterates in image-id order
        for (id, v) in store.iter() {
            index.insert(id, v, &mut visited);
        }
        Ok(index)
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, node: u32) -> &[f32] {
        let n = node as usize;
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    fn sim(&self, q: &[f32], node: u32) -> f32 {
        dot(q, self.vector(node))
    }

    fn level_for(&self, image_id: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(image_id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ h.finish());
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, id: &str, raw: &[f32], visited: &mut Visited) {
        let node = self.ids.len() as u32;
        let level = self.level_for(id);
        let q = prepare(self.params.metric, raw);
        self.ids.push(id.to_string());
        self.data.extend_from_slice(&q);
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let top = self.levels[entry as usize] as usize;
        let mut ep = Scored {
            sim: self.sim(&q, entry),
            node: entry,
        };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(&q, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer, visited);
            let neighbours = self.select_neighbours(&found, self.max_links(layer));
            self.links[node as usize][layer] = neighbours.iter().map(|s| s.node).collect();
            for s in &neighbours {
                self.connect(s.node, node, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    /// Adds `to` to `from`'s list on `layer`, shrinking with the heuristic if
    /// the list overflows.
    fn connect(&mut self, from: u32, to: u32, layer: usize) {
        let cap = self.max_links(layer);
        let list = &mut self.links[from as usize][layer];
        list.push(to);
        if list.len() <= cap {
            return;
        }
        let base = self.vector(from).to_vec();
        let mut cands: Vec<Scored> = self.links[from as usize][layer]
            .iter()
            .map(|&n| Scored {
                sim: self.sim(&base, n),
                node: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbours(&cands, cap);
        self.links[from as usize][layer] = kept.iter().map(|s| s.node).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every neighbour already kept; backfill with the best pruned.
    /// `cands` must be sorted best-first.
    fn select_neighbours(&self, cands: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in cands {
            if kept.len() >= m {
                break;
            }
            let v = self.vector(c.node);
            let diverse = kept.iter().all(|k| dot(v, self.vector(k.node)) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy(&self, q: &[f32], mut best: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in &self.links[best.node as usize][layer] {
                let cand = Scored {
                    sim: self.sim(q, n),
                    node: n,
                };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` nodes sorted best-first.
    fn search_layer(&self, q: &[f32], eps: &[Scored], ef: usize, layer: usize, visited: &mut Visited) -> Vec<Scored> {
        visited.reset(self.ids.len());
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        // min-heap of the current results via Reverse ordering
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &e in eps {
            if visited.insert(e.node) {
                frontier.push(e);
                results.push(std::cmp::Reverse(e));
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(c) = frontier.pop() {
            let worst = results.peek().map(|r| r.0);
            if let Some(w) = worst {
                if results.len() >= ef && c < w {
                    break;
                }
            }
            for &n in &self.links[c.node as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    sim: self.sim(q, n),
                    node: n,
                };
                let worst = results.peek().map(|r| r.0);
                if results.len() < ef || worst.is_some_and(|w| s > w) {
                    frontier.push(s);
                    results.push(std::cmp::Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Top-`m` images by similarity, descending, ties by image id ascending.
    pub fn search(&self, query: &[f32], m: usize) -> Result<Vec<VectorHit>> {
        if query.len() != self.dim {
            return Err(Error::Data(format!(
                "query dim {} does not match index dim {}",
                query.len(),
                self.dim
            )));
        }
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        if m == 0 {
            return Ok(Vec::new());
        }
        let q = prepare(self.params.metric, query);
        let ef = self.params.effective_ef(m);
        let mut hits: Vec<(u32, f32)> = if ef >= self.len() {
            (0..self.len() as u32).map(|n| (n, self.sim(&q, n))).collect()
        } else {
            let top = self.levels[entry as usize] as usize;
            let mut ep = Scored {
                sim: self.sim(&q, entry),
                node: entry,
            };
            for layer in (1..=top).rev() {
                ep = self.greedy(&q, ep, layer);
            }
            let mut visited = Visited::new(self.len());
            self.search_layer(&q, &[ep], ef, 0, &mut visited)
                .into_iter()
                .map(|s| (s.node, s.sim))
                .collect()
        };
        // node order is image-id order, so this is the image-id tie rule
        sort_hits(&mut hits);
        hits.truncate(m);
        Ok(hits
            .into_iter()
            .map(|(n, s)| VectorHit {
                image_id: self.ids[n as usize].clone(),
                similarity: s,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MANN_MAGIC);
        out.extend_from_slice(&MANN_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.ef_construction as u32).to_le_bytes());
        out.extend_from_slice(&(self.params.ef_search as u32).to_le_bytes());
        out.extend_from_slice(&self.params.seed.to_le_bytes());
        out.push(match self.params.metric {
            Metric::Cosine => 0,
            Metric::InnerProduct => 1,
        });
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.entry.map_or(u32::MAX, |e| e).to_le_bytes());
        for (n, id) in self.ids.iter().enumerate() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in self.vector(n as u32) {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out.push(self.levels[n]);
            for layer in &self.links[n] {
                out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
                for &l in layer {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MANN_MAGIC {
            return Err(Error::Data("bad ANN index magic".into()));
        }
        let version = r.u32()?;
        if version != MANN_VERSION {
            return Err(Error::Data(format!("unsupported ANN index version {version}")));
        }
        let params = HnswParams {
            m: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            ef_search: r.u32()? as usize,
            seed: r.u64()?,
            metric: match r.take(1)?[0] {
                0 => Metric::Cosine,
                1 => Metric::InnerProduct,
                x => return Err(Error::Data(format!("unknown metric tag {x}"))),
            },
        };
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let entry = match r.u32()? {
            u32::MAX => None,
            e => Some(e),
        };
        let mut index = Self {
            params,
            dim,
            ids: Vec::with_capacity(count.min(1 << 24)),
            data: Vec::new(),
            levels: Vec::new(),
            links: Vec::new(),
            entry,
        };
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::Data(e.to_string()))?;
            index.ids.push(id);
            for _ in 0..dim {
                index.data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let level = r.take(1)?[0];
            index.levels.push(level);
            let mut layers = Vec::with_capacity(level as usize + 1);
            for _ in 0..=level {
                let n = r.u32()? as usize;
                let mut list = Vec::with_capacity(n);
                for _ in 0..n {
                    list.push(r.u32()?);
                }
                layers.push(list);
            }
            index.links.push(layers);
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes in ANN index".into()));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Generation-stamped visited set.
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    fn insert(&mut self, n: u32) -> bool {
        let slot = &mut self.marks[n as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("truncated ANN index".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
