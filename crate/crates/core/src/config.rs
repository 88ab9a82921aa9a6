//! Run configuration: a flat TOML file whose keys are mirrored one-to-one by
//! command-line flags (`n_texts` ↔ `--n-texts`). Flags win over the file,
//! the file wins over defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::dataset::{SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::fusion::{FusionWeights, DEFAULT_GRID};
use crate::kb::VectorStore;
use crate::matchers::remote::{resolve_endpoint, RemoteClient, RemoteScorer};
use crate::matchers::{
    BiEncoder, JointScorer, Lexicon, MatcherKind, PrecomputedTextEmbeddings, ScorerBindings, StoredImageScorer,
    ToyCrossScorer, ToyTextEncoder,
};
use crate::retrieval::{Pairing, RetrievalConfig};
use crate::text_index::Bm25Params;
use crate::vector_index::{HnswParams, Metric};

/// Where a matcher's scores come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Provider {
    #[default]
    Toy,
    /// Text embedding table (`{text, vec}` per line).
    Precomputed(PathBuf),
    Remote,
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provider::Toy => f.write_str("toy"),
            Provider::Precomputed(p) => write!(f, "precomputed:{}", p.display()),
            Provider::Remote => f.write_str("remote"),
        }
    }
}

impl FromStr for Provider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Provider::Toy),
            "remote" => Ok(Provider::Remote),
            _ => match s.strip_prefix("precomputed:") {
                Some(p) if !p.is_empty() => Ok(Provider::Precomputed(p.into())),
                _ => Err(Error::Config(format!(
                    "provider must be toy, remote or precomputed:<path>, got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for Provider {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provider {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Holds `entities.jsonl` and `vectors.mvec`.
    pub kb_dir: PathBuf,
    /// Holds `splits.jsonl` and `queries.mvec`.
    pub splits_dir: PathBuf,
    /// Joint text-image vectors for the CLIP matcher.
    pub joint_vectors: PathBuf,
    /// Token directions for the toy CLIP text encoder.
    pub lexicon: PathBuf,
    pub out_dir: PathBuf,

    /// Raw inputs for `build-kb`.
    pub raw_entities: PathBuf,
    pub raw_vectors: PathBuf,
    pub dev_size: usize,
    pub test_size: usize,
    pub min_glosses: usize,
    pub min_images: usize,

    pub seed: u64,
    pub n_texts: usize,
    pub m_images: usize,
    pub pairing: Pairing,
    pub k_assemble: usize,
    pub grid: Vec<f64>,
    /// Fixed weights for `eval`; tuned weights are used when absent.
    pub weights: Option<[f64; 4]>,

    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub hnsw_m: usize,
    pub hnsw_ef_construction: usize,
    pub hnsw_ef_search: usize,
    pub hnsw_metric: Metric,

    pub tbm: Provider,
    pub tcm: Provider,
    pub ibm: Provider,
    pub clip: Provider,
    pub scorer_endpoint: Option<String>,

    pub synth_entities: usize,
    pub synth_glosses: usize,
    pub synth_images: usize,
    pub synth_latent_dim: usize,
    pub synth_image_dim: usize,
    pub synth_sigma: f64,
    pub synth_vocab: usize,

    /// Worker threads, 0 = all cores. Never changes results.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        let hnsw = HnswParams::default();
        let bm25 = Bm25Params::default();
        let retrieval = RetrievalConfig::default();
        Self {
            kb_dir: "data/kb".into(),
            splits_dir: "data/splits".into(),
            joint_vectors: "data/joint.mvec".into(),
            lexicon: "data/lexicon.json".into(),
            out_dir: "out".into(),
            raw_entities: "raw/entities.jsonl".into(),
            raw_vectors: "raw/vectors.mvec".into(),
            dev_size: synth.dev_size,
            test_size: synth.test_size,
            min_glosses: 3,
            min_images: 3,
            seed: synth.seed,
            n_texts: retrieval.n_texts,
            m_images: retrieval.m_images,
            pairing: retrieval.pairing,
            k_assemble: 3,
            grid: DEFAULT_GRID.to_vec(),
            weights: None,
            bm25_k1: bm25.k1,
            bm25_b: bm25.b,
            hnsw_m: hnsw.m,
            hnsw_ef_construction: hnsw.ef_construction,
            hnsw_ef_search: hnsw.ef_search,
            hnsw_metric: hnsw.metric,
            tbm: Provider::Toy,
            tcm: Provider::Toy,
            ibm: Provider::Toy,
            clip: Provider::Toy,
            scorer_endpoint: None,
            synth_entities: synth.num_entities,
            synth_glosses: synth.glosses_per_entity,
            synth_images: synth.images_per_entity,
            synth_latent_dim: synth.latent_dim,
            synth_image_dim: synth.image_dim,
            synth_sigma: synth.noise_sigma,
            synth_vocab: synth.vocab_size,
            threads: 0,
        }
    }
}

/// Command-line mirrors of every [`RunConfig`] key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kb_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_vectors: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_entities: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_vectors: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_glosses: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_texts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairing: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_assemble: Option<usize>,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Four comma-separated weights: TBM,TCM,IBM,CLIP.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25_k1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bm25_b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hnsw_m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hnsw_ef_construction: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hnsw_ef_search: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hnsw_metric: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tbm: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcm: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibm: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer_endpoint: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_entities: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_glosses: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_latent_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_image_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_vocab: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn config_err(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Overlays `o` on `self`, key by key.
    pub fn with_overrides(&self, o: &Overrides) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(config_err)?;
        let top = toml::Table::try_from(o).map_err(config_err)?;
        for (k, v) in top {
            base.insert(k, v);
        }
        let cfg: Self = base.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Effective configuration as TOML, every key present.
    pub fn to_toml(&self) -> String {
        let mut s = toml::to_string(self).expect("config serializes");
        if self.weights.is_none() {
            s.push_str("# weights = tuned on dev\n");
        }
        if self.scorer_endpoint.is_none() {
            s.push_str("# scorer_endpoint = unset\n");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval().validate()?;
        self.bm25().validate()?;
        self.hnsw().validate()?;
        self.synth().validate()?;
        if self.k_assemble == 0 {
            return Err(Error::Config("k_assemble must be at least 1".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Config(format!("grid must be non-empty and non-negative: {:?}", self.grid)));
        }
        if let Some(w) = self.weights {
            FusionWeights(w).validate()?;
        }
        if matches!(self.tcm, Provider::Precomputed(_)) {
            return Err(Error::Config("tcm is a cross scorer and cannot use precomputed embeddings".into()));
        }
        if matches!(self.ibm, Provider::Precomputed(_)) {
            return Err(Error::Config("ibm scores stored image vectors; use toy or remote".into()));
        }
        Ok(())
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            n_texts: self.n_texts,
            m_images: self.m_images,
            pairing: self.pairing,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
        }
    }

    pub fn hnsw(&self) -> HnswParams {
        HnswParams {
            m: self.hnsw_m,
            ef_construction: self.hnsw_ef_construction,
            ef_search: self.hnsw_ef_search,
            seed: self.seed,
            metric: self.hnsw_metric,
        }
    }

    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            num_entities: self.synth_entities,
            glosses_per_entity: self.synth_glosses,
            images_per_entity: self.synth_images,
            latent_dim: self.synth_latent_dim,
            image_dim: self.synth_image_dim,
            noise_sigma: self.synth_sigma,
            vocab_size: self.synth_vocab,
            seed: self.seed,
            dev_size: self.dev_size,
            test_size: self.test_size,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            dev_size: self.dev_size,
            test_size: self.test_size,
            seed: self.seed,
            min_glosses: self.min_glosses,
            min_images: self.min_images,
        }
    }

    pub fn provider(&self, kind: MatcherKind) -> &Provider {
        match kind {
            MatcherKind::Tbm => &self.tbm,
            MatcherKind::Tcm => &self.tcm,
            MatcherKind::Ibm => &self.ibm,
            MatcherKind::Clip => &self.clip,
        }
    }

    /// Resolves one provider per matcher kind. The remote client is opened
    /// once and shared.
    pub fn bindings(&self) -> Result<ScorerBindings> {
        let mut client: Option<Arc<RemoteClient>> = None;
        let mut remote = |kind| -> Result<Arc<RemoteScorer>> {
            if client.is_none() {
                let ep = resolve_endpoint(self.scorer_endpoint.as_deref())
                    .ok_or_else(|| Error::Config("remote provider needs scorer_endpoint".into()))?;
                client = Some(Arc::new(RemoteClient::connect(&ep)?));
            }
            Ok(Arc::new(RemoteScorer {
                client: client.clone().expect("connected"),
                kind,
            }))
        };
        let joint = || -> Result<Arc<VectorStore>> { Ok(Arc::new(VectorStore::load(&self.joint_vectors)?)) };

        let tbm: Arc<dyn crate::matchers::TextPairScorer> = match &self.tbm {
            Provider::Toy => Arc::new(BiEncoder(ToyTextEncoder::default())),
            Provider::Precomputed(p) => Arc::new(BiEncoder(PrecomputedTextEmbeddings::load(p)?)),
            Provider::Remote => remote(MatcherKind::Tbm)?,
        };
        let tcm: Arc<dyn crate::matchers::TextPairScorer> = match &self.tcm {
            Provider::Remote => remote(MatcherKind::Tcm)?,
            _ => Arc::new(ToyCrossScorer),
        };
        let ibm: Arc<dyn crate::matchers::ImagePairScorer> = match &self.ibm {
            Provider::Remote => remote(MatcherKind::Ibm)?,
            _ => Arc::new(StoredImageScorer),
        };
        let clip: Arc<dyn crate::matchers::TextImageScorer> = match &self.clip {
            Provider::Toy => Arc::new(JointScorer {
                text: Lexicon::load(&self.lexicon)?,
                images: joint()?,
            }),
            Provider::Precomputed(p) => Arc::new(JointScorer {
                text: PrecomputedTextEmbeddings::load(p)?,
                images: joint()?,
            }),
            Provider::Remote => remote(MatcherKind::Clip)?,
        };
        Ok(ScorerBindings { tbm, tcm, ibm, clip })
    }
}
