//! Experiment configuration: a `key = value` file overlaid with command-line
//! flags. Recognized keys:
//!
//! ```text
//! posts, entities     dataset files (JSONL posts, TSV entity embeddings)
//! synthetic           synthetic spec file, used instead of posts/entities
//! folds, out, seed, ablation, eta, mu
//! d_w, d0, d, d_u, k  model widths; d_s follows the entity width
//! vocab, d_i          only needed when they cannot be inferred from data
//! lr, batch_size, max_epochs, stop_patience, lr_patience, lr_factor, lambda
//! ```
//!
//! Relative paths in a file resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kdcn::config::KeyValues;
use kdcn::dataset::{load_dataset, generate_synthetic, EntityTable, Post, SyntheticSpec};
use kdcn::model::{Ablation, HyperParams, TrainConfig};

pub const PATH_KEYS: [&str; 3] = ["posts", "entities", "synthetic"];

const OWN_KEYS: [&str; 14] = [
    "posts", "entities", "synthetic", "folds", "out", "ablation", "eta", "mu", "d_w", "d0", "d", "d_u", "k",
    "vocab",
];

pub fn allowed_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = OWN_KEYS.to_vec();
    keys.push("d_i");
    keys.extend(TrainConfig::KEYS);
    keys
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Files { posts: PathBuf, entities: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOverrides {
    pub d_w: Option<usize>,
    pub d0: Option<usize>,
    pub d: Option<usize>,
    pub d_u: Option<usize>,
    pub k: Option<usize>,
    pub vocab: Option<usize>,
    pub d_i: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub train: TrainConfig,
    pub model: ModelOverrides,
    pub ablation: Ablation,
    pub folds: usize,
    pub out: PathBuf,
    /// Drives splits, initialization, shuffling, masking and pseudo entities.
    pub seed: u64,
    pub eta: u32,
    pub mu: u32,
}

/// Reads a config file, making its relative paths absolute.
pub fn read_config_file(path: &Path) -> Result<KeyValues> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut kv = KeyValues::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(v) = kv.raw(key) {
            let p = Path::new(v);
            if p.is_relative() {
                let joined = base.join(p);
                kv.set(key, joined.display());
            }
        }
    }
    Ok(kv)
}

impl ExperimentConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&allowed_keys())?;
        let source = match (kv.raw("posts"), kv.raw("entities"), kv.raw("synthetic")) {
            (Some(p), Some(e), None) => DataSource::Files {
                posts: p.into(),
                entities: e.into(),
            },
            (None, None, Some(s)) => DataSource::Synthetic(read_synthetic_spec(Path::new(s))?),
            (None, None, None) => bail!("no data source: set `posts` and `entities`, or `synthetic`"),
            (Some(_), None, None) | (None, Some(_), None) => bail!("`posts` and `entities` must be given together"),
            _ => bail!("give either `posts`/`entities` or `synthetic`, not both"),
        };
        let train = TrainConfig::from_key_values(kv)?;
        train.validate()?;
        let ablation = match kv.raw("ablation") {
            Some(s) => s.parse().with_context(|| format!("key `ablation`: {s:?}"))?,
            None => Ablation::default(),
        };
        let cfg = Self {
            source,
            model: ModelOverrides {
                d_w: kv.get("d_w")?,
                d0: kv.get("d0")?,
                d: kv.get("d")?,
                d_u: kv.get("d_u")?,
                k: kv.get("k")?,
                vocab: kv.get("vocab")?,
                d_i: kv.get("d_i")?,
            },
            ablation,
            folds: kv.get_or("folds", 5)?,
            out: kv.get_or("out", PathBuf::from("out"))?,
            seed: train.seed,
            eta: kv.get_or("eta", 100)?,
            mu: kv.get_or("mu", 100)?,
            train,
        };
        if cfg.folds == 0 {
            bail!("key `folds` must be positive");
        }
        kdcn::dataset::MaskPattern::new(cfg.eta, cfg.mu, 0)?;
        Ok(cfg)
    }

    pub fn load_data(&self) -> Result<(Vec<Post>, EntityTable)> {
        match &self.source {
            DataSource::Files { posts, entities } => {
                let loaded = load_dataset(posts, entities)
                    .with_context(|| format!("loading {} and {}", posts.display(), entities.display()))?;
                if loaded.rejected > 0 {
                    log::warn!("{} posts rejected for having fewer than two entities", loaded.rejected);
                }
                Ok((loaded.posts, loaded.entities))
            }
            DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        }
    }

    /// Model shape for `posts`, inferring vocabulary, image width and
    /// entity width where not overridden.
    pub fn hyper_for(&self, posts: &[Post], table: &EntityTable) -> Result<HyperParams> {
        let vocab = match (self.model.vocab, &self.source) {
            (Some(v), _) => v,
            (None, DataSource::Synthetic(spec)) => spec.vocab,
            (None, DataSource::Files { .. }) => posts.iter().flat_map(|p| p.tokens.iter()).max().map_or(1, |m| m + 1),
        };
        let d_i = match self.model.d_i {
            Some(d) => d,
            None => image_dim(posts).context("no post has an image; set `d_i`")?,
        };
        let d_e = table.dim().context("entity table is empty")?;
        let mut h = HyperParams::new(vocab, d_i);
        let m = &self.model;
        h.d_w = m.d_w.unwrap_or(h.d_w);
        h.d0 = m.d0.unwrap_or(h.d0);
        h.d = m.d.unwrap_or(h.d);
        h.d_u = m.d_u.unwrap_or(h.d_u);
        h.k = m.k.unwrap_or(h.k);
        h.d_s = d_e;
        h.d_e = d_e;
        h.pair_seed = self.seed;
        h.validate()?;
        Ok(h)
    }
}

pub fn image_dim(posts: &[Post]) -> Option<usize> {
    posts.iter().find(|p| p.cmt).and_then(|p| p.image_features.as_ref()).map(Vec::len)
}

pub fn read_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading synthetic spec {}", path.display()))?;
    synthetic_spec_from(&KeyValues::parse(&text)?)
}

pub fn synthetic_spec_from(kv: &KeyValues) -> Result<SyntheticSpec> {
    kv.check_keys(&SyntheticSpec::KEYS)?;
    let spec = SyntheticSpec::from_key_values(kv)?;
    spec.validate()?;
    Ok(spec)
}
