//! Posts, entity embeddings and everything that reshapes them before
//! training: file ingestion, pseudo-image filling, splits, image masking
//! and the synthetic benchmark generator.

mod io;
mod mask;
mod modality;
mod split;
mod synth;

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

pub use io::{load_dataset, load_entities, load_posts, write_entities, write_posts, Loaded};
pub use mask::{apply_mask_pattern, masked_count, MaskPattern, MASK_GRID};
pub use modality::{materialize_modalities, PSEUDO_FEATURE_VALUE};
pub use split::{make_splits, split_indices, Split, SplitRatio};
pub use synth::{generate_synthetic, Channels, SyntheticSpec, SYNTH_ENTITY_DIM};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown entity id {id:?}")]
    UnknownEntity {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("entity id {0:?} not in table")]
    MissingEntity(String),
    #[error("need at least {needed} posts, got {got}")]
    TooFewPosts { needed: usize, got: usize },
    #[error("image percentage {0} is not on the 0/20/40/60/80/100 grid")]
    InvalidPercent(u32),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonRumor = 0,
    Rumor = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::NonRumor),
            1 => Some(Label::Rumor),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_rumor(self) -> bool {
        self == Label::Rumor
    }
}

/// One social-media instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Post {
    pub id: String,
    pub tokens: Vec<usize>,
    /// Image feature vector. `None` until pseudo features are filled in
    /// for posts without an image.
    pub image_features: Option<Vec<f64>>,
    pub entity_ids: Vec<String>,
    pub label: Label,
    /// Complete-modality token: true iff a real image is attached.
    pub cmt: bool,
}

/// Entity embeddings keyed by id, in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityTable {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EntityTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an embedding. Every vector must share the length
    /// of the first one inserted.
    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> std::result::Result<(), String> {
        let id = id.into();
        if let Some(dim) = self.dim() {
            if vector.len() != dim {
                return Err(format!(
                    "entity {id:?} has dimension {}, expected {dim}",
                    vector.len()
                ));
            }
        }
        match self.index.get(&id) {
            Some(&i) => self.vectors[i] = vector,
            None => {
                self.index.insert(id.clone(), self.ids.len());
                self.ids.push(id);
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.index
            .get(id)
            .map(|&i| self.vectors[i].as_slice())
            .ok_or_else(|| DataError::MissingEntity(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| (id.as_str(), v.as_slice()))
    }

    /// Embeddings of a post's entities, in the post's order.
    pub fn vectors_for(&self, ids: &[String]) -> Result<Vec<Vec<f64>>> {
        ids.iter().map(|id| self.get(id).map(<[f64]>::to_vec)).collect()
    }
}
