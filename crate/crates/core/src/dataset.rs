//! Dataset construction: eligibility filtering, leak-free splits, query pair
//! generation, ambiguity/sparsity statistics, the positive-guaranteeing batch
//! sampler and a synthetic multimodal KB generator.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{Entity, EntityId, KnowledgeBase, QueryPair, SplitName, Splits, VectorStore};
use crate::matchers::Lexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dev_size: usize,
    pub test_size: usize,
    pub seed: u64,
    #[serde(default = "default_min")]
    pub min_glosses: usize,
    #[serde(default = "default_min")]
    pub min_images: usize,
}

fn default_min() -> usize {
    3
}

impl SplitSpec {
    pub fn new(dev_size: usize, test_size: usize, seed: u64) -> Self {
        Self {
            dev_size,
            test_size,
            seed,
            min_glosses: 3,
            min_images: 3,
        }
    }
}

/// Glosses and images withheld from one entity for one split slot.
#[derive(Debug, Clone, PartialEq)]
pub struct WithheldPool {
    pub entity_id: EntityId,
    pub glosses: Vec<String>,
    pub images: Vec<(String, Vec<f32>)>,
}

/// One pair per pool: a gloss and an image drawn uniformly from the pool.
pub fn generate_pairs(pools: &[WithheldPool], split: SplitName, seed: u64) -> Result<Vec<QueryPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pools
        .iter()
        .map(|p| {
            if p.glosses.is_empty() || p.images.is_empty() {
                return Err(Error::Data(format!("empty withheld pool for entity {}", p.entity_id)));
            }
            let g = rng.random_range(0..p.glosses.len());
            let i = rng.random_range(0..p.images.len());
            let (image_id, image_vec) = p.images[i].clone();
            Ok(QueryPair {
                query_id: format!("{split}-{}", p.entity_id),
                text: p.glosses[g].clone(),
                image_id,
                image_vec,
                gold: Some(p.entity_id.clone()),
            })
        })
        .collect()
}

fn content_key(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Drops ineligible entities and withholds query evidence so that the KB and
/// the train/dev/test pairs share no gloss string and no image id.
///
/// An entity is kept when it has at least `min_glosses` glosses and
/// `min_images` images and at least one gloss and one image that can be
/// withheld while one of each stays in the KB. Only glosses whose string is
/// unique in the raw KB and images whose content is unique are withheld.
/// Every kept entity contributes one training pair; dev and test entities are
/// a seeded random subset of those able to spare a second gloss and image.
pub fn filter_and_split(raw: &KnowledgeBase, spec: &SplitSpec) -> Result<(KnowledgeBase, Splits)> {
    if spec.dev_size == 0 || spec.test_size == 0 {
        return Err(Error::Config("dev_size and test_size must be positive".into()));
    }
    let mut gloss_uses: HashMap<&str, usize> = HashMap::new();
    let mut image_uses: HashMap<Vec<u32>, usize> = HashMap::new();
    for e in raw.entities() {
        for g in &e.glosses {
            *gloss_uses.entry(g.as_str()).or_default() += 1;
        }
        for img in &e.image_ids {
            let v = raw.vectors().get(img).expect("kb images resolve");
            *image_uses.entry(content_key(v)).or_default() += 1;
        }
    }

    struct Plan<'a> {
        entity: &'a Entity,
        free_glosses: Vec<usize>,
        free_images: Vec<usize>,
    }
    let mut plans = Vec::new();
    for e in raw.entities() {
        if e.glosses.len() < spec.min_glosses.max(2) || e.image_ids.len() < spec.min_images.max(2) {
            continue;
        }
        let free_glosses: Vec<usize> = (0..e.glosses.len())
            .filter(|&i| gloss_uses[e.glosses[i].as_str()] == 1)
            .collect();
        let free_images: Vec<usize> = (0..e.image_ids.len())
            .filter(|&i| image_uses[&content_key(raw.vectors().get(&e.image_ids[i]).unwrap())] == 1)
            .collect();
        if free_glosses.is_empty() || free_images.is_empty() {
            continue;
        }
        plans.push(Plan {
            entity: e,
            free_glosses,
            free_images,
        });
    }

    let heldout_eligible: Vec<usize> = plans
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.free_glosses.len() >= 2
                && p.free_images.len() >= 2
                && p.entity.glosses.len() >= 3
                && p.entity.image_ids.len() >= 3
        })
        .map(|(i, _)| i)
        .collect();
    if spec.dev_size + spec.test_size > heldout_eligible.len() {
        return Err(Error::Data(format!(
            "not enough eligible entities: dev {} + test {} requested, {} can be held out ({} kept)",
            spec.dev_size,
            spec.test_size,
            heldout_eligible.len(),
            plans.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order = heldout_eligible.clone();
    order.shuffle(&mut rng);
    let mut role: HashMap<usize, SplitName> = HashMap::new();
    for &p in &order[..spec.dev_size] {
        role.insert(p, SplitName::Dev);
    }
    for &p in &order[spec.dev_size..spec.dev_size + spec.test_size] {
        role.insert(p, SplitName::Test);
    }

    let mut kb_entities = Vec::with_capacity(plans.len());
    let mut kb_images: HashSet<String> = HashSet::new();
    let mut pools: BTreeMap<SplitName, Vec<WithheldPool>> = BTreeMap::new();
    for (pi, plan) in plans.iter().enumerate() {
        let mut gl = plan.free_glosses.clone();
        let mut im = plan.free_images.clone();
        gl.shuffle(&mut rng);
        im.shuffle(&mut rng);
        let mut slots = vec![SplitName::Train];
        if let Some(&r) = role.get(&pi) {
            slots.push(r);
        }
        let e = plan.entity;
        let mut withheld_g = HashSet::new();
        let mut withheld_i = HashSet::new();
        for (k, &slot) in slots.iter().enumerate() {
            withheld_g.insert(gl[k]);
            withheld_i.insert(im[k]);
            let img = &e.image_ids[im[k]];
            pools.entry(slot).or_default().push(WithheldPool {
                entity_id: e.id.clone(),
                glosses: vec![e.glosses[gl[k]].clone()],
                images: vec![(img.clone(), raw.vectors().get(img).unwrap().to_vec())],
            });
        }
        let kept = Entity {
            id: e.id.clone(),
            glosses: (0..e.glosses.len())
                .filter(|i| !withheld_g.contains(i))
                .map(|i| e.glosses[i].clone())
                .collect(),
            image_ids: (0..e.image_ids.len())
                .filter(|i| !withheld_i.contains(i))
                .map(|i| e.image_ids[i].clone())
                .collect(),
        };
        kb_images.extend(kept.image_ids.iter().cloned());
        kb_entities.push(kept);
    }

    let store = raw.vectors().retain(|id| kb_images.contains(id));
    let kb = KnowledgeBase::new(kb_entities, store)?;
    let pair_seed = rng.random::<u64>();
    let mut splits = Splits {
        kb_entities: kb.entities().iter().map(|e| e.id.clone()).collect(),
        ..Default::default()
    };
    for (split, list) in pools {
        let pairs = generate_pairs(&list, split, pair_seed ^ split as u64)?;
        match split {
            SplitName::Train => splits.train = pairs,
            SplitName::Dev => splits.dev = pairs,
            SplitName::Test => splits.test = pairs,
        }
    }
    Ok((kb, splits))
}

/// Overlaps between the KB evidence and the query splits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeakReport {
    pub shared_glosses: Vec<String>,
    pub shared_images: Vec<String>,
}

impl LeakReport {
    pub fn is_clean(&self) -> bool {
        self.shared_glosses.is_empty() && self.shared_images.is_empty()
    }
}

/// Reports every gloss string and image id appearing in more than one of
/// {KB evidence, train, dev, test}.
pub fn leak_check(kb: &KnowledgeBase, splits: &Splits) -> LeakReport {
    let mut gloss_groups: HashMap<&str, HashSet<u8>> = HashMap::new();
    let mut image_groups: HashMap<&str, HashSet<u8>> = HashMap::new();
    for e in kb.entities() {
        for g in &e.glosses {
            gloss_groups.entry(g).or_default().insert(0);
        }
        for i in &e.image_ids {
            image_groups.entry(i).or_default().insert(0);
        }
    }
    for (gi, split) in SplitName::ALL.iter().enumerate() {
        for q in splits.get(*split) {
            gloss_groups.entry(&q.text).or_default().insert(gi as u8 + 1);
            image_groups.entry(&q.image_id).or_default().insert(gi as u8 + 1);
        }
    }
    let collect = |m: HashMap<&str, HashSet<u8>>| {
        let mut v: Vec<String> = m
            .into_iter()
            .filter(|(_, g)| g.len() > 1)
            .map(|(k, _)| k.to_string())
            .collect();
        v.sort();
        v
    };
    LeakReport {
        shared_glosses: collect(gloss_groups),
        shared_images: collect(image_groups),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub entities: usize,
    pub glosses: usize,
    pub images: usize,
    pub pct_entities_leq3_images: f64,
    pub pct_entities_one_text: f64,
    pub pct_images_multi_entity: f64,
    pub pct_texts_multi_entity: f64,
    /// gloss count -> number of entities
    pub gloss_histogram: BTreeMap<usize, usize>,
    /// image count -> number of entities
    pub image_histogram: BTreeMap<usize, usize>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Sparsity and ambiguity statistics. An image is shared when identical vector
/// content appears under two or more entities; a text is shared on exact string
/// equality. Both percentages are over distinct contents / strings.
pub fn compute_stats(kb: &KnowledgeBase) -> StatsReport {
    let mut gloss_hist = BTreeMap::new();
    let mut image_hist = BTreeMap::new();
    let mut text_owners: HashMap<&str, HashSet<usize>> = HashMap::new();
    let mut image_owners: HashMap<Vec<u32>, HashSet<usize>> = HashMap::new();
    for (ei, e) in kb.entities().iter().enumerate() {
        *gloss_hist.entry(e.glosses.len()).or_insert(0) += 1;
        *image_hist.entry(e.image_ids.len()).or_insert(0) += 1;
        for g in &e.glosses {
            text_owners.entry(g).or_default().insert(ei);
        }
        for i in &e.image_ids {
            if let Some(v) = kb.vectors().get(i) {
                image_owners.entry(content_key(v)).or_default().insert(ei);
            }
        }
    }
    let n = kb.len();
    let leq3 = kb.entities().iter().filter(|e| e.image_ids.len() <= 3).count();
    let one = kb.entities().iter().filter(|e| e.glosses.len() == 1).count();
    StatsReport {
        entities: n,
        glosses: kb.gloss_count(),
        images: kb.image_count(),
        pct_entities_leq3_images: pct(leq3, n),
        pct_entities_one_text: pct(one, n),
        pct_images_multi_entity: pct(
            image_owners.values().filter(|o| o.len() > 1).count(),
            image_owners.len(),
        ),
        pct_texts_multi_entity: pct(
            text_owners.values().filter(|o| o.len() > 1).count(),
            text_owners.len(),
        ),
        gloss_histogram: gloss_hist,
        image_histogram: image_hist,
    }
}

impl StatsReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let rows = [
            ("entities", format!("{}", self.entities)),
            ("glosses", format!("{}", self.glosses)),
            ("images", format!("{}", self.images)),
            ("entities with <= 3 images (%)", format!("{:.1}", self.pct_entities_leq3_images)),
            ("entities with one text (%)", format!("{:.1}", self.pct_entities_one_text)),
            ("images with >= 2 entities (%)", format!("{:.1}", self.pct_images_multi_entity)),
            ("texts with >= 2 entities (%)", format!("{:.1}", self.pct_texts_multi_entity)),
        ];
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<w$}  {v:>10}");
        }
        s
    }
}

/// Draws `batch_size` candidate indices uniformly without replacement. If the
/// draw holds no positive while positives exist, a uniformly chosen slot is
/// overwritten with a uniformly chosen positive.
pub fn sample_training_batch(positive: &[bool], batch_size: usize, seed: u64) -> Result<Vec<usize>> {
    if batch_size > positive.len() {
        return Err(Error::Data(format!(
            "batch size {batch_size} exceeds {} candidates",
            positive.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = index::sample(&mut rng, positive.len(), batch_size).into_vec();
    if batch_size > 0 && !batch.iter().any(|&i| positive[i]) {
        let positives: Vec<usize> = (0..positive.len()).filter(|&i| positive[i]).collect();
        if !positives.is_empty() {
            let slot = rng.random_range(0..batch.len());
            batch[slot] = positives[rng.random_range(0..positives.len())];
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_entities: usize,
    pub glosses_per_entity: usize,
    pub images_per_entity: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub noise_sigma: f64,
    /// Size of the content-token vocabulary. Each entity owns
    /// [`CONTENT_TOKENS`] consecutive tokens modulo this size, so values below
    /// `CONTENT_TOKENS * num_entities` make entities share tokens.
    pub vocab_size: usize,
    pub seed: u64,
    pub dev_size: usize,
    pub test_size: usize,
}

pub const CONTENT_TOKENS: usize = 8;
pub const STOPWORDS: usize = 32;
const GLOSS_LEN: usize = 10;

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_entities: 500,
            glosses_per_entity: 4,
            images_per_entity: 4,
            latent_dim: 16,
            image_dim: 64,
            noise_sigma: 0.1,
            vocab_size: CONTENT_TOKENS * 500,
            seed: 1,
            dev_size: 50,
            test_size: 50,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_entities,
            self.glosses_per_entity,
            self.images_per_entity,
            self.latent_dim,
            self.image_dim,
            self.vocab_size,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if self.image_dim < self.latent_dim {
            return Err(Error::Config("image_dim must be >= latent_dim".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic_mkb`].
#[derive(Debug, Clone)]
pub struct SynthMkb {
    pub kb: KnowledgeBase,
    pub splits: Splits,
    /// Joint text-image space vectors for every KB and query image.
    pub joint: VectorStore,
    /// Token -> joint-space direction, for the toy cross-modal encoder.
    pub lexicon: Lexicon,
    /// Per-entity unit latent in raw entity-id order.
    pub latents: Vec<Vec<f32>>,
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random `rows x cols` matrix with orthonormal columns (Gram-Schmidt).
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn content_token(index: usize) -> String {
    format!("c{index}")
}

/// Deterministic synthetic MKB with known ground truth.
///
/// Every entity gets a unit latent. Image vectors are the latent pushed
/// through a fixed orthonormal projection plus Gaussian noise; joint-space
/// vectors are the latent plus noise. Glosses mix the entity's own content
/// tokens, random vocabulary tokens and shared stopwords. Image and text draws
/// use independent streams, so `vocab_size` leaves every vector unchanged.
pub fn generate_synthetic_mkb(spec: &SynthSpec) -> Result<SynthMkb> {
    spec.validate()?;
    let mut vrng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut trng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_7e47_0000_0001);
    let sigma = spec.noise_sigma;

    let latents: Vec<Vec<f64>> = (0..spec.num_entities)
        .map(|_| gaussian_unit(&mut vrng, spec.latent_dim))
        .collect();
    let proj = orthonormal_columns(&mut vrng, spec.image_dim, spec.latent_dim);

    let mut image_records = Vec::new();
    let mut joint_records = Vec::new();
    let mut entities = Vec::with_capacity(spec.num_entities);
    for (e, u) in latents.iter().enumerate() {
        let id = EntityId::new(format!("e{e:05}"));
        let mut image_ids = Vec::with_capacity(spec.images_per_entity);
        for k in 0..spec.images_per_entity {
            let image_id = format!("e{e:05}-i{k:02}");
            let img: Vec<f32> = (0..spec.image_dim)
                .map(|r| {
                    let signal: f64 = (0..spec.latent_dim).map(|c| proj[c][r] * u[c]).sum();
                    let noise: f64 = StandardNormal.sample(&mut vrng);
                    (signal + sigma * noise) as f32
                })
                .collect();
            let joint: Vec<f32> = u
                .iter()
                .map(|&x| {
                    let noise: f64 = StandardNormal.sample(&mut vrng);
                    (x + sigma * noise) as f32
                })
                .collect();
            image_records.push((image_id.clone(), img));
            joint_records.push((image_id.clone(), joint));
            image_ids.push(image_id);
        }
        entities.push(Entity {
            id,
            glosses: Vec::new(),
            image_ids,
        });
    }

    // text
    let own = |e: usize, j: usize| (e * CONTENT_TOKENS + j) % spec.vocab_size;
    let mut seen = HashSet::new();
    for (e, entity) in entities.iter_mut().enumerate() {
        for _ in 0..spec.glosses_per_entity {
            let mut attempt = 0usize;
            let gloss = loop {
                let mut toks: Vec<String> = (0..GLOSS_LEN)
                    .map(|_| {
                        let r: f64 = trng.random();
                        if r < 0.5 {
                            content_token(own(e, trng.random_range(0..CONTENT_TOKENS)))
                        } else if r < 0.6 {
                            content_token(trng.random_range(0..spec.vocab_size))
                        } else {
                            format!("s{}", trng.random_range(0..STOPWORDS))
                        }
                    })
                    .collect();
                if attempt > 64 {
                    toks.push(format!("s{}", STOPWORDS + attempt));
                }
                let g = toks.join(" ");
                if seen.insert(g.clone()) {
                    break g;
                }
                attempt += 1;
            };
            entity.glosses.push(gloss);
        }
    }

    let mut owners: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for e in 0..spec.num_entities {
        for j in 0..CONTENT_TOKENS {
            owners.entry(own(e, j)).or_default().insert(e);
        }
    }
    let lex_acc = owners.into_iter().map(|(t, es)| {
        let mut acc = vec![0.0f64; spec.latent_dim];
        for e in es {
            acc.iter_mut().zip(&latents[e]).for_each(|(a, b)| *a += b);
        }
        (t, acc)
    });
    let lexicon = Lexicon::new(
        spec.latent_dim,
        lex_acc.map(|(t, v)| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            (content_token(t), v.iter().map(|x| (x / n) as f32).collect())
        }),
    );

    let raw = KnowledgeBase::new(entities, VectorStore::from_records(spec.image_dim, image_records)?)?;
    let split_spec = SplitSpec::new(spec.dev_size, spec.test_size, spec.seed);
    let (kb, splits) = filter_and_split(&raw, &split_spec)?;
    let joint = VectorStore::from_records(spec.latent_dim, joint_records)?;
    Ok(SynthMkb {
        kb,
        splits,
        joint,
        lexicon,
        latents: latents
            .into_iter()
            .map(|v| v.into_iter().map(|x| x as f32).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: &str, n_gloss: usize, n_img: usize, records: &mut Vec<(String, Vec<f32>)>) -> Entity {
        let image_ids: Vec<String> = (0..n_img)
            .map(|k| {
                let iid = format!("{id}-img{k}");
                records.push((iid.clone(), vec![records.len() as f32 + 1.0, 1.0]));
                iid
            })
            .collect();
        Entity {
            id: id.into(),
            glosses: (0..n_gloss).map(|k| format!("{id} gloss {k}")).collect(),
            image_ids,
        }
    }

    #[test]
    fn entity_with_two_glosses_filtered_out() {
        let mut rec = Vec::new();
        let ents = vec![
            entity("a", 4, 4, &mut rec),
            entity("b", 4, 4, &mut rec),
            entity("c", 2, 4, &mut rec),
            entity("d", 4, 4, &mut rec),
            entity("e", 3, 3, &mut rec),
        ];
        let raw = KnowledgeBase::new(ents, VectorStore::from_records(2, rec).unwrap()).unwrap();
        let (kb, splits) = filter_and_split(&raw, &SplitSpec::new(1, 1, 9)).unwrap();
        assert!(kb.entity(&"c".into()).is_none());
        assert_eq!(kb.len(), 4);
        assert_eq!(splits.train.len(), 4);
        assert_eq!((splits.dev.len(), splits.test.len()), (1, 1));
        assert!(leak_check(&kb, &splits).is_clean());
        for e in kb.entities() {
            assert!(!e.glosses.is_empty() && !e.image_ids.is_empty());
        }
    }

    #[test]
    fn too_few_eligible_is_an_error() {
        let mut rec = Vec::new();
        let ents = vec![entity("a", 4, 4, &mut rec), entity("b", 4, 4, &mut rec)];
        let raw = KnowledgeBase::new(ents, VectorStore::from_records(2, rec).unwrap()).unwrap();
        assert!(filter_and_split(&raw, &SplitSpec::new(2, 1, 0)).is_err());
    }

    #[test]
    fn forced_pair_and_determinism() {
        let pool = WithheldPool {
            entity_id: "x".into(),
            glosses: vec!["only gloss".into()],
            images: vec![("only-img".into(), vec![1.0])],
        };
        let pairs = generate_pairs(std::slice::from_ref(&pool), SplitName::Dev, 5).unwrap();
        assert_eq!(pairs[0].text, "only gloss");
        assert_eq!(pairs[0].image_id, "only-img");
        assert_eq!(pairs[0].gold.as_ref().unwrap().as_str(), "x");
        let empty = WithheldPool {
            glosses: vec![],
            ..pool
        };
        assert!(generate_pairs(&[empty], SplitName::Dev, 5).is_err());
    }

    #[test]
    fn stats_unique_kb_has_no_ambiguity() {
        let mut rec = Vec::new();
        let ents = vec![entity("a", 1, 2, &mut rec), entity("b", 3, 5, &mut rec)];
        let kb = KnowledgeBase::new(ents, VectorStore::from_records(2, rec).unwrap()).unwrap();
        let s = compute_stats(&kb);
        assert_eq!(s.pct_images_multi_entity, 0.0);
        assert_eq!(s.pct_texts_multi_entity, 0.0);
        assert_eq!(s.pct_entities_one_text, 50.0);
        assert_eq!(s.pct_entities_leq3_images, 50.0);
        assert_eq!(s.gloss_histogram[&3], 1);
    }

    #[test]
    fn batch_size_larger_than_pool_fails() {
        assert!(sample_training_batch(&[true, false], 3, 0).is_err());
    }

    #[test]
    fn all_positive_batch_is_fine() {
        let mut labels = vec![false; 200];
        labels[..64].iter_mut().for_each(|l| *l = true);
        let b = sample_training_batch(&labels, 64, 3).unwrap();
        assert_eq!(b.len(), 64);
        let uniq: HashSet<_> = b.iter().collect();
        assert_eq!(uniq.len(), 64);
    }

    #[test]
    fn synth_spec_validation() {
        let bad = SynthSpec {
            image_dim: 8,
            latent_dim: 16,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
