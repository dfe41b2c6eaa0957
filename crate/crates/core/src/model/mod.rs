//! The assembled network: parameters, per-post preparation, forward pass
//! and loss. Training lives in [`train`], metrics in [`metrics`] and the
//! on-disk format in [`checkpoint`].

pub mod checkpoint;
pub mod metrics;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cross_modal::{decompose, fuse, orthogonal_loss, DecompositionParams, DecompositionVars};
use crate::dataset::{EntityTable, Post};
use crate::encoders::{
    encode_image, encode_text, image_preactivation, text_preactivation, ImageEncoderParams, ImageEncoderVars, LstmVars, TextEncoderParams, TextEncoderVars,
};
use crate::error::{Error, Result};
use crate::knowledge::{
    mean_entity_feature, post_seed, remove_random_entities, select_pairs_skipping, signed_attention, PairSelection,
};
use crate::tensor::{Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{evaluate, Metrics};
pub use train::{train, Adam, EpochRecord, History, TrainConfig};

/// Output probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub vocab: usize,
    /// Word embedding width.
    pub d_w: usize,
    /// Hidden size of each LSTM direction.
    pub d0: usize,
    /// Width of `H_T` and `H_I`.
    pub d: usize,
    /// Image feature length, without the flag slot.
    pub d_i: usize,
    pub d_s: usize,
    pub d_u: usize,
    /// Entity embedding width.
    pub d_e: usize,
    pub k: usize,
    /// Seed for pseudo entities and entity removal.
    pub pair_seed: u64,
}

impl HyperParams {
    pub fn new(vocab: usize, d_i: usize) -> Self {
        Self {
            vocab,
            d_w: 32,
            d0: 32,
            d: 64,
            d_i,
            d_s: 50,
            d_u: 50,
            d_e: 50,
            k: 5,
            pair_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab", self.vocab),
            ("d_w", self.d_w),
            ("d0", self.d0),
            ("d", self.d),
            ("d_i", self.d_i),
            ("d_s", self.d_s),
            ("d_u", self.d_u),
            ("d_e", self.d_e),
            ("k", self.k),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.d_s != self.d_e {
            return Err(Error::InvalidConfig(format!(
                "d_s ({}) must equal d_e ({}) so the query can attend over entity pairs",
                self.d_s, self.d_e
            )));
        }
        Ok(())
    }
}

/// Variant switches. The default is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Image representation replaced by zeros.
    pub no_visual: bool,
    /// `[H_T; H_I]` replaces the unique/shared fusion features.
    pub concat_tv: bool,
    /// `f_kg` dropped from the classifier input.
    pub no_ke: bool,
    /// Tiled mean entity vector replaces `f_kg`.
    pub mean_ke: bool,
    /// No complete-modality flag on the image input.
    pub no_cmt: bool,
    /// Orthogonality weight forced to zero.
    pub no_orth: bool,
    /// Random entities removed per post before pair selection.
    pub rm_ke: usize,
    /// Most distant pairs skipped before taking the top k.
    pub rm_pair: usize,
}

impl Ablation {
    pub fn is_full(&self) -> bool {
        *self == Ablation::default()
    }

    /// Applies one `name` or `name=n` switch.
    pub fn apply(&mut self, switch: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("unknown ablation {switch:?}"));
        let (name, arg) = match switch.split_once('=') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (switch.trim(), None),
        };
        let count = |a: Option<&str>| -> Result<usize> {
            a.ok_or_else(bad)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("ablation {name} needs a count, got {switch:?}")))
        };
        match (name, arg) {
            ("no_visual", None) => self.no_visual = true,
            ("concat_tv", None) => self.concat_tv = true,
            ("no_ke", None) => self.no_ke = true,
            ("mean_ke", None) => self.mean_ke = true,
            ("no_cmt", None) => self.no_cmt = true,
            ("no_orth", None) => self.no_orth = true,
            ("rm_ke", a) => self.rm_ke = count(a)?,
            ("rm_pair", a) => self.rm_pair = count(a)?,
            _ => return Err(bad()),
        }
        if self.no_ke && self.mean_ke {
            return Err(Error::InvalidConfig("no_ke and mean_ke are exclusive".into()));
        }
        Ok(())
    }

    pub fn switches(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (on, name) in [
            (self.no_visual, "no_visual"),
            (self.concat_tv, "concat_tv"),
            (self.no_ke, "no_ke"),
            (self.mean_ke, "mean_ke"),
            (self.no_cmt, "no_cmt"),
            (self.no_orth, "no_orth"),
        ] {
            if on {
                out.push(name.to_string());
            }
        }
        if self.rm_ke > 0 {
            out.push(format!("rm_ke={}", self.rm_ke));
        }
        if self.rm_pair > 0 {
            out.push(format!("rm_pair={}", self.rm_pair));
        }
        out
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated switches; empty or `none` is the full model.
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "none") {
            a.apply(part)?;
        }
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.switches();
        if s.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&s.join(","))
        }
    }
}

/// Every learnable tensor plus the settings that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub hyper: HyperParams,
    pub ablation: Ablation,
    pub text: TextEncoderParams,
    pub image: ImageEncoderParams,
    pub decomposition: DecompositionParams,
    /// `1 × width`
    pub w_f: Tensor,
    /// `[1]`
    pub b_f: Tensor,
}

/// Canonical parameter order, shared by the optimizer and checkpoints.
pub const PARAM_NAMES: [&str; 14] = [
    "text.embedding",
    "text.forward.w",
    "text.forward.b",
    "text.backward.w",
    "text.backward.b",
    "text.w_t",
    "text.b_t",
    "image.w_i",
    "image.b_i",
    "decomposition.w_shared",
    "decomposition.p_i",
    "decomposition.p_t",
    "classifier.w_f",
    "classifier.b_f",
];

pub fn classifier_width(h: &HyperParams, a: &Ablation) -> usize {
    let cross = if a.concat_tv { 2 * h.d } else { 3 * h.d_u + 3 * h.d_s };
    let kg = if a.no_ke { 0 } else { 4 * h.d_e };
    cross + kg
}

impl ModelParams {
    pub fn init(hyper: HyperParams, ablation: Ablation, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = TextEncoderParams::init(&mut rng, hyper.vocab, hyper.d_w, hyper.d0, hyper.d);
        let image = ImageEncoderParams::init(&mut rng, hyper.d_i, hyper.d, !ablation.no_cmt);
        let decomposition = DecompositionParams::init(&mut rng, hyper.d, hyper.d_s, hyper.d_u);
        let width = classifier_width(&hyper, &ablation);
        let w_f = crate::encoders::uniform(&mut rng, &[1, width], 1.0 / (width as f64).sqrt());
        Ok(Self {
            hyper,
            ablation,
            text,
            image,
            decomposition,
            w_f,
            b_f: Tensor::zeros(&[1]),
        })
    }

    pub fn tensors(&self) -> [&Tensor; 14] {
        [
            &self.text.embedding,
            &self.text.forward.w,
            &self.text.forward.b,
            &self.text.backward.w,
            &self.text.backward.b,
            &self.text.w_t,
            &self.text.b_t,
            &self.image.w_i,
            &self.image.b_i,
            &self.decomposition.w_shared,
            &self.decomposition.p_i,
            &self.decomposition.p_t,
            &self.w_f,
            &self.b_f,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 14] {
        [
            &mut self.text.embedding,
            &mut self.text.forward.w,
            &mut self.text.forward.b,
            &mut self.text.backward.w,
            &mut self.text.backward.b,
            &mut self.text.w_t,
            &mut self.text.b_t,
            &mut self.image.w_i,
            &mut self.image.b_i,
            &mut self.decomposition.w_shared,
            &mut self.decomposition.p_i,
            &mut self.decomposition.p_t,
            &mut self.w_f,
            &mut self.b_f,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.into_iter().zip(self.tensors())
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, grad: bool) -> ModelVars {
        ModelVars {
            text: self.text.bind(tape, grad),
            image: self.image.bind(tape, grad),
            decomposition: self.decomposition.bind(tape, grad),
            w_f: tape.leaf(self.w_f.clone(), grad),
            b_f: tape.leaf(self.b_f.clone(), grad),
        }
    }

    /// Checks that every tensor has the shape the settings imply.
    pub fn check_shapes(&self) -> Result<()> {
        let h = &self.hyper;
        let img_cols = h.d_i + usize::from(!self.ablation.no_cmt);
        let expected: [Vec<usize>; 14] = [
            vec![h.vocab, h.d_w],
            vec![4 * h.d0, h.d_w + h.d0],
            vec![4 * h.d0],
            vec![4 * h.d0, h.d_w + h.d0],
            vec![4 * h.d0],
            vec![h.d, 2 * h.d0],
            vec![h.d],
            vec![h.d, img_cols],
            vec![h.d],
            vec![h.d_s, h.d],
            vec![h.d_u, h.d],
            vec![h.d_u, h.d],
            vec![1, classifier_width(h, &self.ablation)],
            vec![1],
        ];
        for ((name, t), shape) in self.named().zip(expected) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Prepares posts for this model's settings.
    pub fn prepare(&self, posts: &[Post], table: &EntityTable) -> Result<Vec<Prepared>> {
        prepare_posts(posts, table, &self.hyper, &self.ablation)
    }

    /// Value-only forward pass.
    pub fn forward(&self, post: &Prepared) -> Result<Forward> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = forward_on_tape(&mut tape, &vars, post, &self.ablation)?;
        Ok(out.read(&tape))
    }

    /// Predicted rumor probabilities, one per post.
    pub fn predict(&self, posts: &[Prepared]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mark = tape.len();
        let mut out = Vec::with_capacity(posts.len());
        for post in posts {
            let f = forward_on_tape(&mut tape, &vars, post, &self.ablation)?;
            out.push(tape.value(f.y_hat).data()[0]);
            tape.rewind(mark);
        }
        Ok(out)
    }

    /// Current value of the orthogonality penalty.
    /// Smallest `|pre-activation|` over the encoder ReLUs for `post`. A
    /// finite-difference step larger than this can straddle a kink.
    pub fn relu_margin(&self, post: &Prepared) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let text = text_preactivation(&mut tape, &post.tokens, &vars.text)?;
        let mut margin = tape.value(text).data().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
        if !self.ablation.no_visual {
            let image = image_preactivation(&mut tape, &post.image, post.cmt, &vars.image)?;
            margin = tape.value(image).data().iter().fold(margin, |m, x| m.min(x.abs()));
        }
        Ok(margin)
    }

    pub fn orthogonal_loss(&self) -> f64 {
        let mut tape = Tape::new();
        let vars = self.decomposition.bind(&mut tape, false);
        let l = orthogonal_loss(&mut tape, &vars).expect("shapes checked at construction");
        tape.value(l).data()[0]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub text: TextEncoderVars,
    pub image: ImageEncoderVars,
    pub decomposition: DecompositionVars,
    pub w_f: Var,
    pub b_f: Var,
}

impl ModelVars {
    /// Inverse of [`ModelVars::all`].
    pub fn from_leaves(v: &[Var]) -> Self {
        assert_eq!(v.len(), PARAM_NAMES.len(), "one leaf per parameter");
        ModelVars {
            text: TextEncoderVars {
                embedding: v[0],
                forward: LstmVars { w: v[1], b: v[2] },
                backward: LstmVars { w: v[3], b: v[4] },
                w_t: v[5],
                b_t: v[6],
            },
            image: ImageEncoderVars { w_i: v[7], b_i: v[8] },
            decomposition: DecompositionVars {
                w_shared: v[9],
                p_i: v[10],
                p_t: v[11],
            },
            w_f: v[12],
            b_f: v[13],
        }
    }

    /// Leaves in [`PARAM_NAMES`] order.
    pub fn all(&self) -> [Var; 14] {
        [
            self.text.embedding,
            self.text.forward.w,
            self.text.forward.b,
            self.text.backward.w,
            self.text.backward.b,
            self.text.w_t,
            self.text.b_t,
            self.image.w_i,
            self.image.b_i,
            self.decomposition.w_shared,
            self.decomposition.p_i,
            self.decomposition.p_t,
            self.w_f,
            self.b_f,
        ]
    }
}

/// Knowledge input of one post, resolved ahead of training.
#[derive(Clone, Debug, PartialEq)]
pub enum KnowledgeInput {
    Pairs(PairSelection),
    Mean(Vec<f64>),
    Absent,
}

/// A post with image features, flag, label and entity pairs resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub tokens: Vec<usize>,
    pub image: Vec<f64>,
    pub cmt: bool,
    pub label: f64,
    pub knowledge: KnowledgeInput,
}

pub fn prepare_posts(posts: &[Post], table: &EntityTable, h: &HyperParams, a: &Ablation) -> Result<Vec<Prepared>> {
    posts
        .iter()
        .map(|post| {
            let image = post
                .image_features
                .clone()
                .ok_or_else(|| Error::MissingImage(post.id.clone()))?;
            if image.len() != h.d_i {
                return Err(Error::Dimension {
                    what: "image feature length",
                    expected: h.d_i,
                    got: image.len(),
                });
            }
            let seed = post_seed(h.pair_seed, &post.id);
            let knowledge = if a.no_ke {
                KnowledgeInput::Absent
            } else {
                let mut entities = table.vectors_for(&post.entity_ids)?;
                if let Some(e) = entities.first() {
                    if e.len() != h.d_e {
                        return Err(Error::Dimension {
                            what: "entity embedding",
                            expected: h.d_e,
                            got: e.len(),
                        });
                    }
                }
                if a.mean_ke {
                    KnowledgeInput::Mean(mean_entity_feature(&entities)?)
                } else {
                    if a.rm_ke > 0 {
                        entities = remove_random_entities(&entities, a.rm_ke, seed.rotate_left(1));
                    }
                    KnowledgeInput::Pairs(select_pairs_skipping(&entities, h.k, a.rm_pair, seed)?)
                }
            };
            Ok(Prepared {
                id: post.id.clone(),
                tokens: post.tokens.clone(),
                image,
                cmt: post.cmt,
                label: post.label.as_f64(),
                knowledge,
            })
        })
        .collect()
}

/// Handles to the intermediates of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub h_t: Var,
    pub h_i: Var,
    pub i_s: Var,
    pub i_u: Var,
    pub t_s: Var,
    pub t_u: Var,
    pub f_kg: Option<Var>,
    pub attention: Option<crate::knowledge::AttentionVars>,
    pub features: Var,
    pub y_hat: Var,
}

/// Values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub y_hat: f64,
    pub h_t: Vec<f64>,
    pub h_i: Vec<f64>,
    pub i_s: Vec<f64>,
    pub i_u: Vec<f64>,
    pub t_s: Vec<f64>,
    pub t_u: Vec<f64>,
    pub f_kg: Option<Vec<f64>>,
    pub beta_pos: Option<Vec<f64>>,
    pub beta_neg: Option<Vec<f64>>,
    pub features: Vec<f64>,
}

impl ForwardVars {
    fn read(&self, tape: &Tape) -> Forward {
        let v = |var: Var| tape.value(var).data().to_vec();
        Forward {
            y_hat: tape.value(self.y_hat).data()[0],
            h_t: v(self.h_t),
            h_i: v(self.h_i),
            i_s: v(self.i_s),
            i_u: v(self.i_u),
            t_s: v(self.t_s),
            t_u: v(self.t_u),
            f_kg: self.f_kg.map(v),
            beta_pos: self.attention.map(|a| v(a.beta_pos)),
            beta_neg: self.attention.map(|a| v(a.beta_neg)),
            features: v(self.features),
        }
    }
}

/// Records the full network for one post.
pub fn forward_on_tape(tape: &mut Tape, vars: &ModelVars, post: &Prepared, a: &Ablation) -> Result<ForwardVars> {
    let h_t = encode_text(tape, &post.tokens, &vars.text)?;
    let h_i = if a.no_visual {
        let d = tape.value(vars.image.b_i).len();
        tape.constant(Tensor::zeros(&[d]))
    } else {
        encode_image(tape, &post.image, post.cmt, &vars.image)?
    };
    let parts = decompose(tape, h_i, h_t, &vars.decomposition)?;

    let mut blocks = Vec::with_capacity(5);
    if a.concat_tv {
        blocks.extend([h_t, h_i]);
    } else {
        let fusion = fuse(tape, &parts)?;
        blocks.extend([fusion.f_unique, fusion.f_share]);
    }

    let (f_kg, attention) = match &post.knowledge {
        KnowledgeInput::Absent => (None, None),
        KnowledgeInput::Mean(m) => (Some(tape.constant(Tensor::vector(m.clone()))), None),
        KnowledgeInput::Pairs(sel) => {
            let q = tape.concat(&[parts.i_s, parts.t_s], 0)?;
            let pairs = tape.constant(sel.pairs.clone());
            let dis = tape.constant(Tensor::vector(sel.distances.clone()));
            let att = signed_attention(tape, q, pairs, dis)?;
            (Some(att.f_kg), Some(att))
        }
    };
    if a.no_ke != f_kg.is_none() {
        return Err(Error::InvalidConfig(format!(
            "post {:?} was prepared for a different knowledge setting",
            post.id
        )));
    }
    blocks.extend(f_kg);

    let features = tape.concat(&blocks, 0)?;
    let width = tape.value(vars.w_f).cols();
    if tape.value(features).len() != width {
        return Err(Error::Dimension {
            what: "classifier input",
            expected: width,
            got: tape.value(features).len(),
        });
    }
    let logit = tape.matmul(vars.w_f, features)?;
    let logit = tape.add(logit, vars.b_f)?;
    let prob = tape.sigmoid(logit);
    let y_hat = tape.clamp(prob, PROB_CLAMP, 1.0 - PROB_CLAMP);
    Ok(ForwardVars {
        h_t,
        h_i,
        i_s: parts.i_s,
        i_u: parts.i_u,
        t_s: parts.t_s,
        t_u: parts.t_u,
        f_kg,
        attention,
        features,
        y_hat,
    })
}

/// `-(y log ŷ + (1 - y) log(1 - ŷ))` for an already clamped `ŷ`.
pub fn bce_on_tape(tape: &mut Tape, y_hat: Var, y: f64) -> Var {
    let log_p = tape.log(y_hat);
    let neg = tape.negate(y_hat);
    let one_minus = tape.shift(neg, 1.0);
    let log_q = tape.log(one_minus);
    let a = tape.scale(log_p, -y);
    let b = tape.scale(log_q, -(1.0 - y));
    tape.add(a, b).expect("matching shapes")
}

/// Loss handles for one batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub classification: Var,
    pub orthogonal: Var,
}

/// `L = Σ_i BCE(ŷ_i, y_i) + λ L_o` over `batch`.
pub fn total_loss(tape: &mut Tape, vars: &ModelVars, batch: &[&Prepared], a: &Ablation, lambda: f64) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for post in batch {
        let f = forward_on_tape(tape, vars, post, a)?;
        terms.push(bce_on_tape(tape, f.y_hat, post.label));
    }
    let stacked = tape.concat(&terms, 0)?;
    let classification = tape.sum(stacked);
    let orthogonal = orthogonal_loss(tape, &vars.decomposition)?;
    let total = if lambda == 0.0 {
        classification
    } else {
        let weighted = tape.scale(orthogonal, lambda);
        tape.add(classification, weighted)?
    };
    Ok(BatchLoss {
        total,
        classification,
        orthogonal,
    })
}
