//! JSON checkpoint:
//!
//! ```text
//! {
//!   "format": "kdcn-checkpoint",
//!   "version": 1,
//!   "hyper": { "vocab": .., "d_w": .., ... },
//!   "ablation": { "no_visual": false, ..., "rm_ke": 0, "rm_pair": 0 },
//!   "train": { "lr": .., ... } | null,
//!   "tensors": [ { "name": "text.embedding", "shape": [r, c], "data": [..] }, ... ]
//! }
//! ```
//!
//! Tensors appear in [`PARAM_NAMES`] order, data row-major. Floats are
//! written with shortest round-trip formatting so loading is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ablation, HyperParams, ModelParams, TrainConfig, PARAM_NAMES};
use crate::cross_modal::DecompositionParams;
use crate::encoders::{ImageEncoderParams, LstmParams, TextEncoderParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT: &str = "kdcn-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: HyperParams,
    pub ablation: Ablation,
    pub train: Option<TrainConfig>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(model: &ModelParams, train: Option<&TrainConfig>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            hyper: model.hyper.clone(),
            ablation: model.ablation,
            train: train.cloned(),
            tensors: model
                .named()
                .map(|(name, t)| NamedTensor {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<ModelParams> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} version {}",
                self.format, self.version
            )));
        }
        if self.tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                PARAM_NAMES.len(),
                self.tensors.len()
            )));
        }
        let mut ts = Vec::with_capacity(PARAM_NAMES.len());
        for (nt, name) in self.tensors.iter().zip(PARAM_NAMES) {
            if nt.name != name {
                return Err(Error::Checkpoint(format!("expected tensor {name:?}, found {:?}", nt.name)));
            }
            let t = Tensor::new(nt.shape.clone(), nt.data.clone())
                .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            ts.push(t);
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("count checked");
        let model = ModelParams {
            hyper: self.hyper.clone(),
            ablation: self.ablation,
            text: TextEncoderParams {
                embedding: next(),
                forward: LstmParams { w: next(), b: next() },
                backward: LstmParams { w: next(), b: next() },
                w_t: next(),
                b_t: next(),
            },
            image: ImageEncoderParams { w_i: next(), b_i: next() },
            decomposition: DecompositionParams {
                w_shared: next(),
                p_i: next(),
                p_t: next(),
            },
            w_f: next(),
            b_f: next(),
        };
        model.hyper.validate()?;
        model.check_shapes()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint is plain data")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint(path: &Path, model: &ModelParams, train: Option<&TrainConfig>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, Checkpoint::new(model, train).to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<TrainConfig>)> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ck = Checkpoint::from_json(&text)?;
    Ok((ck.to_model()?, ck.train))
}
