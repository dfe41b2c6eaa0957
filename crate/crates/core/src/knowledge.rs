//! Entity-pair selection by Manhattan distance and the distance-aware
//! signed attention that turns the selected pairs into `f_kg`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TOP_K: usize = 5;

/// Floor applied to selected distances so every weight stays positive.
pub const DISTANCE_FLOOR: f64 = 1e-12;

/// Smallest magnitude the attention normalizer may take; its sign is kept.
pub const NORMALIZER_EPS: f64 = 1e-8;

/// Where one side of an entity pair came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Member {
    /// Index into the caller's entity list.
    Entity(usize),
    /// Index of a generated pseudo entity.
    Pseudo(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSelection {
    /// `k × 2d_e`, row i is `concat(e_a, e_b)`.
    pub pairs: Tensor,
    /// Non-increasing, all positive.
    pub distances: Vec<f64>,
    pub provenance: Vec<(Member, Member)>,
    pub pseudo_added: usize,
    pub candidates: usize,
}

impl PairSelection {
    pub fn k(&self) -> usize {
        self.distances.len()
    }

    pub fn distance_sum(&self) -> f64 {
        self.distances.iter().sum()
    }
}

pub fn manhattan(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "manhattan operand",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Smallest number of extra entities so that `n + m` entities give at least
/// `needed` pairs.
pub fn pseudo_needed(n: usize, needed: usize) -> usize {
    let mut m = 0;
    while (n + m) * (n + m).saturating_sub(1) / 2 < needed {
        m += 1;
    }
    m
}

/// Stable per-post seed so pseudo entities are fixed for a run.
pub fn post_seed(run_seed: u64, post_id: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in post_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ run_seed.rotate_left(17)
}

/// Top-`k` pairs by Manhattan distance.
pub fn select_pairs(entities: &[Vec<f64>], k: usize, seed: u64) -> Result<PairSelection> {
    select_pairs_skipping(entities, k, 0, seed)
}

/// Like [`select_pairs`] but discards the `skip` most distant pairs first.
/// Padding grows so that `k` pairs remain after the skip.
pub fn select_pairs_skipping(entities: &[Vec<f64>], k: usize, skip: usize, seed: u64) -> Result<PairSelection> {
    if entities.len() < 2 {
        return Err(Error::TooFewEntities(entities.len()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("top-k must be at least 1".into()));
    }
    let dim = entities[0].len();
    if let Some(bad) = entities.iter().find(|e| e.len() != dim) {
        return Err(Error::Dimension {
            what: "entity vector",
            expected: dim,
            got: bad.len(),
        });
    }

    let n = entities.len();
    let extra = pseudo_needed(n, k + skip);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pseudo: Vec<Vec<f64>> = (0..extra)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let member = |i: usize| if i < n { Member::Entity(i) } else { Member::Pseudo(i - n) };
    let vector = |i: usize| if i < n { &entities[i] } else { &pseudo[i - n] };

    let total = n + extra;
    let mut ranked = Vec::with_capacity(total * (total - 1) / 2);
    for a in 0..total {
        for b in a + 1..total {
            ranked.push((manhattan(vector(a), vector(b))?, a, b));
        }
    }
    let candidates = ranked.len();
    // stable, so equal distances keep lexicographic pair order
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0));

    let chosen = &ranked[skip..skip + k];
    let mut data = Vec::with_capacity(k * 2 * dim);
    for &(_, a, b) in chosen {
        data.extend_from_slice(vector(a));
        data.extend_from_slice(vector(b));
    }
    Ok(PairSelection {
        pairs: Tensor::matrix(k, 2 * dim, data)?,
        distances: chosen.iter().map(|c| c.0.max(DISTANCE_FLOOR)).collect(),
        provenance: chosen.iter().map(|&(_, a, b)| (member(a), member(b))).collect(),
        pseudo_added: extra,
        candidates,
    })
}

/// Drops `n` randomly chosen entities, never going below two.
pub fn remove_random_entities(entities: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let keep = entities.len().saturating_sub(n).max(2.min(entities.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, entities.len(), keep).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| entities[i].clone()).collect()
}

/// Mean entity vector tiled four times, standing in for `f_kg`.
pub fn mean_entity_feature(entities: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = entities.first().ok_or(Error::TooFewEntities(0))?;
    let mut mean = vec![0.0; first.len()];
    for e in entities {
        if e.len() != mean.len() {
            return Err(Error::Dimension {
                what: "entity vector",
                expected: mean.len(),
                got: e.len(),
            });
        }
        mean.iter_mut().zip(e).for_each(|(m, x)| *m += x);
    }
    let n = entities.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean.repeat(4))
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub alpha_pos: Var,
    pub alpha_neg: Var,
    pub beta_pos: Var,
    pub beta_neg: Var,
    pub f_kg: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub alpha_pos: Vec<f64>,
    pub alpha_neg: Vec<f64>,
    pub beta_pos: Vec<f64>,
    pub beta_neg: Vec<f64>,
    pub f_kg: Vec<f64>,
}

fn reweight(tape: &mut Tape, dis: Var, alpha: Var) -> Result<Var> {
    let weighted = tape.hadamard(dis, alpha)?;
    let total = tape.sum(weighted);
    let value = tape.value(total).item().unwrap_or(0.0);
    let denom = if value.abs() >= NORMALIZER_EPS {
        total
    } else {
        let sign = if value < 0.0 { -1.0 } else { 1.0 };
        tape.constant(Tensor::scalar(sign * NORMALIZER_EPS))
    };
    Ok(tape.div_scalar(weighted, denom)?)
}

/// Records signed attention of query `q` over pair rows `pairs` (`k × 2d_e`)
/// with distances `dis` (`k`).
pub fn signed_attention(tape: &mut Tape, q: Var, pairs: Var, dis: Var) -> Result<AttentionVars> {
    let (k, width) = {
        let p = tape.value(pairs);
        (p.rows(), p.cols())
    };
    let qlen = tape.value(q).len();
    if tape.value(q).rank() != 1 || qlen != width {
        return Err(Error::Dimension {
            what: "attention query",
            expected: width,
            got: qlen,
        });
    }
    if tape.value(dis).len() != k {
        return Err(Error::Dimension {
            what: "pair distances",
            expected: k,
            got: tape.value(dis).len(),
        });
    }

    let raw = tape.matmul(pairs, q)?;
    let scores = tape.scale(raw, 1.0 / (width as f64).sqrt());
    let alpha_pos = tape.softmax(scores, 0)?;
    let flipped = tape.negate(scores);
    let soft_neg = tape.softmax(flipped, 0)?;
    let alpha_neg = tape.negate(soft_neg);

    let beta_pos = reweight(tape, dis, alpha_pos)?;
    let beta_neg = reweight(tape, dis, alpha_neg)?;

    let pt = tape.transpose(pairs)?;
    let f_pos = tape.matmul(pt, beta_pos)?;
    let f_neg = tape.matmul(pt, beta_neg)?;
    let f_kg = tape.concat(&[f_pos, f_neg], 0)?;
    Ok(AttentionVars {
        alpha_pos,
        alpha_neg,
        beta_pos,
        beta_neg,
        f_kg,
    })
}

/// Value-only signed attention over a selection.
pub fn attend(q: &[f64], selection: &PairSelection) -> Result<AttentionOutput> {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::vector(q.to_vec()));
    let pairs = tape.constant(selection.pairs.clone());
    let dis = tape.constant(Tensor::vector(selection.distances.clone()));
    let v = signed_attention(&mut tape, q, pairs, dis)?;
    let read = |var: Var| tape.value(var).data().to_vec();
    Ok(AttentionOutput {
        alpha_pos: read(v.alpha_pos),
        alpha_neg: read(v.alpha_neg),
        beta_pos: read(v.beta_pos),
        beta_neg: read(v.beta_neg),
        f_kg: read(v.f_kg),
    })
}
