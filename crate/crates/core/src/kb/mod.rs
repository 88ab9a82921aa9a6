//! The multimodal knowledge base: entities with their glosses and images,
//! the image-vector store, and the query splits built on top of them.

mod splits;
mod store;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use splits::{load_splits, save_splits, QueryPair, SplitName, Splits};
pub use store::{VectorStore, MVEC_MAGIC, MVEC_VERSION};

pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const VECTORS_FILE: &str = "vectors.mvec";
pub const VECTORS_JSONL_FILE: &str = "vectors.jsonl";

/// Opaque entity identifier, e.g. `bn:00029980n`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// One KB record. Gloss and image order is significant: index 0 is "the
/// first" text or image of the entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub glosses: Vec<String>,
    pub image_ids: Vec<String>,
}

/// Borrowed view of a stored image with its owning entity.
#[derive(Debug, Clone, Copy)]
pub struct ImageVector<'a> {
    pub image_id: &'a str,
    pub entity_id: &'a EntityId,
    pub vec: &'a [f32],
}

/// Immutable knowledge base. Entities are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    by_id: HashMap<EntityId, usize>,
    vectors: VectorStore,
    image_owner: HashMap<String, usize>,
}

impl KnowledgeBase {
    /// Assembles a KB, sorting entities by id. Fails on duplicate entity ids
    /// and on image ids missing from `vectors`. Content-level problems
    /// (non-finite components, empty glosses, ...) are left to [`validate_kb`].
    pub fn new(mut entities: Vec<Entity>, vectors: VectorStore) -> Result<Self> {
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = HashMap::with_capacity(entities.len());
        let mut image_owner = HashMap::new();
        for (i, e) in entities.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate entity id {}", e.id)));
            }
            for img in &e.image_ids {
                if !vectors.contains(img) {
                    return Err(Error::DanglingImage {
                        entity_id: e.id.to_string(),
                        image_id: img.clone(),
                    });
                }
                // first owner wins here; validate_kb reports the conflict
                image_owner.entry(img.clone()).or_insert(i);
            }
        }
        Ok(Self {
            entities,
            by_id,
            vectors,
            image_owner,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(Vec::new(), VectorStore::empty(dim)).unwrap()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    /// Position of the entity in id order.
    pub fn entity_index(&self, id: &EntityId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn vectors(&self) -> &VectorStore {
        &self.vectors
    }

    pub fn image(&self, image_id: &str) -> Option<ImageVector<'_>> {
        let owner = *self.image_owner.get(image_id)?;
        Some(ImageVector {
            image_id: self.vectors.id(self.vectors.position(image_id)?),
            entity_id: &self.entities[owner].id,
            vec: self.vectors.get(image_id)?,
        })
    }

    /// Entity that owns `image_id`.
    pub fn image_owner(&self, image_id: &str) -> Option<&Entity> {
        self.image_owner.get(image_id).map(|&i| &self.entities[i])
    }

    pub fn gloss_count(&self) -> usize {
        self.entities.iter().map(|e| e.glosses.len()).sum()
    }

    pub fn image_count(&self) -> usize {
        self.entities.iter().map(|e| e.image_ids.len()).sum()
    }
}

/// Loads `entities.jsonl` plus `vectors.mvec` (or `vectors.jsonl`) from `dir`.
pub fn load_kb(dir: &Path) -> Result<KnowledgeBase> {
    let entities = read_entities(&dir.join(ENTITIES_FILE))?;
    let bin = dir.join(VECTORS_FILE);
    let vectors = if bin.exists() {
        VectorStore::load(&bin)?
    } else {
        VectorStore::load_jsonl(&dir.join(VECTORS_JSONL_FILE), None)?
    };
    KnowledgeBase::new(entities, vectors)
}

/// Writes the canonical form: entity lines sorted by id, binary vectors sorted
/// by image id.
pub fn save_kb(kb: &KnowledgeBase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_entities(&dir.join(ENTITIES_FILE), &kb.entities)?;
    kb.vectors.save(&dir.join(VECTORS_FILE))
}

pub fn read_entities(path: &Path) -> Result<Vec<Entity>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Entity = serde_json::from_str(&line).map_err(|e| Error::malformed(path, i + 1, e))?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_entities(path: &Path, entities: &[Entity]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut sorted: Vec<&Entity> = entities.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for e in sorted {
        let line = serde_json::to_string(e).expect("entity serializes");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A broken invariant, naming the entity or image and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: String,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.subject, self.rule, self.detail)
    }
}

/// Minimum per-entity counts checked at the filtering stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationPolicy {
    pub min_glosses: usize,
    pub min_images: usize,
}

/// Structural and content invariants of a KB.
pub fn validate_kb(kb: &KnowledgeBase) -> Vec<Violation> {
    validate_kb_with(kb, ValidationPolicy::default())
}

pub fn validate_kb_with(kb: &KnowledgeBase, policy: ValidationPolicy) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |subject: &str, rule: &'static str, detail: String| {
        out.push(Violation {
            subject: subject.to_string(),
            rule,
            detail,
        })
    };
    let mut owners: HashMap<&str, Vec<&EntityId>> = HashMap::new();
    for e in &kb.entities {
        if e.id.as_str().is_empty() {
            v("<empty>", "empty-id", "entity id must be non-empty".into());
        }
        for (i, g) in e.glosses.iter().enumerate() {
            if g.is_empty() {
                v(e.id.as_str(), "empty-gloss", format!("gloss {i} is empty"));
            }
        }
        if e.glosses.len() < policy.min_glosses {
            v(
                e.id.as_str(),
                "min-gloss",
                format!("{} glosses < {}", e.glosses.len(), policy.min_glosses),
            );
        }
        if e.image_ids.len() < policy.min_images {
            v(
                e.id.as_str(),
                "min-image",
                format!("{} images < {}", e.image_ids.len(), policy.min_images),
            );
        }
        for img in &e.image_ids {
            owners.entry(img.as_str()).or_default().push(&e.id);
        }
    }
    for (id, vec) in kb.vectors.iter() {
        match owners.get(id) {
            None => v(id, "orphan-vector", "no entity references this image".into()),
            Some(list) if list.len() > 1 => v(
                id,
                "multi-owner",
                format!("referenced by {} entries", list.len()),
            ),
            _ => {}
        }
        if vec.iter().any(|x| !x.is_finite()) {
            v(id, "non-finite component", "vector contains NaN or Inf".into());
        } else if vec.iter().all(|&x| x == 0.0) {
            v(id, "zero-norm", "vector has zero norm".into());
        }
    }
    out
}
