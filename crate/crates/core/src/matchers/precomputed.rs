use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TextEmbedder;
use crate::error::{Error, Result};

/// Text embeddings computed offline, looked up by exact text. Unknown texts
/// have no embedding and score as missing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedTextEmbeddings {
    table: HashMap<String, Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    text: String,
    vec: Vec<f32>,
}

impl PrecomputedTextEmbeddings {
    pub fn new(table: HashMap<String, Vec<f32>>) -> Self {
        Self { table }
    }

    /// Embeds `texts` with `encoder` and freezes the result.
    pub fn from_encoder<'a>(encoder: &impl TextEmbedder, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let table = texts
            .into_iter()
            .filter_map(|t| encoder.embed(t).map(|v| (t.to_string(), v)))
            .collect();
        Self { table }
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// One `{"text": .., "vec": [..]}` object per line.
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
            table.insert(rec.text, rec.vec);
        }
        Ok(Self { table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        for k in keys {
            let line = serde_json::to_string(&Line {
                text: k.clone(),
                vec: self.table[k].clone(),
            })
            .expect("serializable");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl TextEmbedder for PrecomputedTextEmbeddings {
    fn embed(&self, text: &str) -> Option<Vec<f32>> {
        self.table.get(text).cloned()
    }
}
