use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DataError, EntityTable, Label, Post, Result};
use crate::config::{ConfigError, KeyValues};

/// Dimension of generated entity embeddings.
pub const SYNTH_ENTITY_DIM: usize = 50;
/// Entity clusters sit at `±CLUSTER_CENTER · 1`.
const CLUSTER_CENTER: f64 = 1.0;
const TOPICS: usize = 4;
const MIN_TOKENS: usize = 6;
const MAX_TOKENS: usize = 10;
/// Probability that a token is drawn from the whole vocabulary rather than
/// the post's topic.
const TOKEN_NOISE: f64 = 0.2;
const MIN_ENTITIES: usize = 4;
const MAX_ENTITIES: usize = 6;

/// Which inconsistencies rumors carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channels {
    /// Rumor images depict a different topic than the text.
    CrossModal,
    /// Rumor entities mix the two embedding clusters.
    Knowledge,
    Both,
}

impl Channels {
    pub fn cross_modal(self) -> bool {
        matches!(self, Channels::CrossModal | Channels::Both)
    }

    pub fn knowledge(self) -> bool {
        matches!(self, Channels::Knowledge | Channels::Both)
    }
}

impl FromStr for Channels {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cross_modal" => Ok(Channels::CrossModal),
            "knowledge" => Ok(Channels::Knowledge),
            "both" => Ok(Channels::Both),
            other => Err(format!("expected cross_modal, knowledge or both, got {other:?}")),
        }
    }
}

impl fmt::Display for Channels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channels::CrossModal => "cross_modal",
            Channels::Knowledge => "knowledge",
            Channels::Both => "both",
        })
    }
}

/// Parameters of a synthetic benchmark with planted inconsistencies.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_posts: usize,
    pub vocab: usize,
    pub n_entities: usize,
    pub d_i: usize,
    pub channels: Channels,
    /// Standard deviation of the Gaussian noise on image features and
    /// entity embeddings.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_posts: 500,
            vocab: 40,
            n_entities: 60,
            d_i: 32,
            channels: Channels::Both,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub const KEYS: [&'static str; 7] = [
        "n_posts",
        "vocab",
        "n_entities",
        "d_i",
        "channels",
        "sigma",
        "seed",
    ];

    /// Reads the documented keys, falling back to defaults for absent ones.
    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            n_posts: kv.get_or("n_posts", d.n_posts)?,
            vocab: kv.get_or("vocab", d.vocab)?,
            n_entities: kv.get_or("n_entities", d.n_entities)?,
            d_i: kv.get_or("d_i", d.d_i)?,
            channels: kv.get_or("channels", d.channels)?,
            sigma: kv.get_or("sigma", d.sigma)?,
            seed: kv.get_or("seed", d.seed)?,
        })
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("n_posts", self.n_posts);
        kv.set("vocab", self.vocab);
        kv.set("n_entities", self.n_entities);
        kv.set("d_i", self.d_i);
        kv.set("channels", self.channels);
        kv.set("sigma", self.sigma);
        kv.set("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DataError::InvalidSpec(m));
        if self.n_entities < 4 {
            return fail(format!("n_entities = {} (need at least 4)", self.n_entities));
        }
        if self.n_posts < 2 {
            return fail(format!("n_posts = {} (need at least 2)", self.n_posts));
        }
        if self.vocab < TOPICS {
            return fail(format!("vocab = {} (need at least {TOPICS})", self.vocab));
        }
        if self.d_i == 0 {
            return fail("d_i = 0".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma = {}", self.sigma));
        }
        Ok(())
    }
}

/// Draws `count` distinct members of `pool` (or all of them if fewer).
fn pick(rng: &mut ChaCha8Rng, pool: &[usize], count: usize) -> Vec<usize> {
    pool.choose_multiple(rng, count.min(pool.len())).copied().collect()
}

/// Generates a label-balanced dataset.
///
/// Entities form two clusters centred at `+c·1` and `-c·1`. Non-rumors
/// (and every post when the knowledge channel is off) draw all entities
/// from the positive cluster; knowledge-channel rumors mix both clusters.
/// Each post has a latent topic: its tokens come mostly from that topic's
/// slice of the vocabulary and its image features scatter around the
/// topic's prototype. Cross-modal-channel rumors carry an image from a
/// different topic.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<Post>, EntityTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");

    let positive_count = spec.n_entities.div_ceil(2);
    let mut table = EntityTable::new();
    for i in 0..spec.n_entities {
        let center = if i < positive_count {
            CLUSTER_CENTER
        } else {
            -CLUSTER_CENTER
        };
        let v = (0..SYNTH_ENTITY_DIM)
            .map(|_| center + noise.sample(&mut rng))
            .collect();
        table.insert(format!("e{i}"), v).expect("uniform dimension");
    }
    let positive: Vec<usize> = (0..positive_count).collect();
    let negative: Vec<usize> = (positive_count..spec.n_entities).collect();

    let prototypes: Vec<Vec<f64>> = (0..TOPICS)
        .map(|_| (0..spec.d_i).map(|_| rng.random::<f64>()).collect())
        .collect();
    let slice = spec.vocab / TOPICS;

    let mut labels: Vec<Label> = (0..spec.n_posts)
        .map(|i| if i < spec.n_posts / 2 { Label::Rumor } else { Label::NonRumor })
        .collect();
    labels.shuffle(&mut rng);

    let mut posts = Vec::with_capacity(spec.n_posts);
    for (i, label) in labels.into_iter().enumerate() {
        let topic = rng.random_range(0..TOPICS);
        let len = rng.random_range(MIN_TOKENS..=MAX_TOKENS);
        let tokens = (0..len)
            .map(|_| {
                if rng.random_bool(TOKEN_NOISE) {
                    rng.random_range(0..spec.vocab)
                } else {
                    topic * slice + rng.random_range(0..slice)
                }
            })
            .collect();

        let cross = label.is_rumor() && spec.channels.cross_modal();
        let knowledge = label.is_rumor() && spec.channels.knowledge();
        let image_topic = if cross {
            (topic + rng.random_range(1..TOPICS)) % TOPICS
        } else {
            topic
        };
        let image = prototypes[image_topic]
            .iter()
            .map(|&p| p + noise.sample(&mut rng))
            .collect();

        let n_ent = rng.random_range(MIN_ENTITIES..=MAX_ENTITIES);
        let mut ids = if knowledge {
            let from_negative = rng.random_range(1..n_ent).min(negative.len());
            let mut ids = pick(&mut rng, &negative, from_negative);
            ids.extend(pick(&mut rng, &positive, n_ent - from_negative));
            ids
        } else {
            pick(&mut rng, &positive, n_ent)
        };
        ids.shuffle(&mut rng);

        posts.push(Post {
            id: format!("s{i}"),
            tokens,
            image_features: Some(image),
            entity_ids: ids.into_iter().map(|e| format!("e{e}")).collect(),
            label,
            cmt: true,
        });
    }
    Ok((posts, table))
}
