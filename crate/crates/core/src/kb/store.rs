//! Dense image-vector store and its binary container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "MVEC" | version: u32 = 1 | dim: u32 | count: u64
//! count x ( id_len: u16 | id bytes (UTF-8) | dim x f32 )
//! ```
//!
//! Records are written sorted by image id, so two saves of the same store are
//! byte-identical.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MVEC_MAGIC: &[u8; 4] = b"MVEC";
pub const MVEC_VERSION: u32 = 1;

/// A set of equal-dimension vectors keyed by image id, iterated in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl VectorStore {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Builds a store from `(image_id, vector)` records in any order.
    ///
    /// Fails on a vector whose length differs from `dim` or on a repeated id.
    pub fn from_records<I>(dim: usize, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut records: Vec<(String, Vec<f32>)> = records.into_iter().collect();
        records.sort_by(|a, b| a.0.cmp(&b.0));
        let mut store = Self::empty(dim);
        store.ids.reserve(records.len());
        store.data.reserve(records.len() * dim);
        for (id, vec) in records {
            if vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    image_id: id,
                    expected: dim,
                    found: vec.len(),
                });
            }
            if store.index.contains_key(&id) {
                return Err(Error::Data(format!("duplicate image id {id}")));
            }
            store.index.insert(id.clone(), store.ids.len());
            store.ids.push(id);
            store.data.extend_from_slice(&vec);
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&[f32]> {
        self.index.get(image_id).map(|&i| self.row(i))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    pub fn position(&self, image_id: &str) -> Option<usize> {
        self.index.get(image_id).copied()
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// `(image_id, vector)` pairs in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .enumerate()
            .map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// Keeps only the ids accepted by `keep`.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let records = self
            .iter()
            .filter(|(id, _)| keep(id))
            .map(|(id, v)| (id.to_string(), v.to_vec()));
        Self::from_records(self.dim, records).expect("subset of a valid store")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(MVEC_MAGIC);
        out.extend_from_slice(&MVEC_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, vec) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in vec {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cursor = ByteCursor { bytes, pos: 0, path };
        if cursor.take(4, 0)? != MVEC_MAGIC {
            return Err(Error::malformed(path, 0, "bad magic, expected MVEC"));
        }
        let version = cursor.u32(0)?;
        if version != MVEC_VERSION {
            return Err(Error::malformed(path, 0, format!("unsupported version {version}")));
        }
        let dim = cursor.u32(0)? as usize;
        let count = cursor.u64(0)? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 24));
        for rec in 1..=count {
            let id_len = cursor.u16(rec)? as usize;
            let id = std::str::from_utf8(cursor.take(id_len, rec)?)
                .map_err(|e| Error::malformed(path, rec, e))?
                .to_string();
            let raw = cursor.take(dim * 4, rec)?;
            let vec = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            records.push((id, vec));
        }
        if cursor.pos != bytes.len() {
            return Err(Error::malformed(
                path,
                count,
                format!("{} trailing bytes after last record", bytes.len() - cursor.pos),
            ));
        }
        Self::from_records(dim, records)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Reads the line-delimited import form: one `{"image_id": .., "vec": [..]}`
    /// per line. The first record fixes the dimension unless `dim` is given.
    pub fn load_jsonl(path: &Path, dim: Option<usize>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            image_id: String,
            vec: Vec<f32>,
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut dim = dim;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line =
                serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
            let expected = *dim.get_or_insert(rec.vec.len());
            if rec.vec.len() != expected {
                return Err(Error::DimensionMismatch {
                    image_id: rec.image_id,
                    expected,
                    found: rec.vec.len(),
                });
            }
            records.push((rec.image_id, rec.vec));
        }
        Self::from_records(dim.unwrap_or(0), records)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            image_id: &'a str,
            vec: &'a [f32],
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (image_id, vec) in self.iter() {
            let line = serde_json::to_string(&Line { image_id, vec }).expect("serializable");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize, record: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::malformed(self.path, record, "truncated vector store")),
        }
    }

    fn u16(&mut self, record: usize) -> Result<u16> {
        let b = self.take(2, record)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, record: usize) -> Result<u32> {
        let b = self.take(4, record)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, record: usize) -> Result<u64> {
        let b = self.take(8, record)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}
