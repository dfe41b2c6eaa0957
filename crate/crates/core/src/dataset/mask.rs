use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Post, Result, Split};

/// Allowed image-retention percentages.
pub const MASK_GRID: [u32; 6] = [0, 20, 40, 60, 80, 100];

/// Image retention for a missing-modality experiment: `eta` percent of
/// training (and validation) posts keep their image, `mu` percent of test
/// posts do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskPattern {
    pub eta: u32,
    pub mu: u32,
    pub seed: u64,
}

impl MaskPattern {
    pub fn new(eta: u32, mu: u32, seed: u64) -> Result<Self> {
        for pct in [eta, mu] {
            if !MASK_GRID.contains(&pct) {
                return Err(DataError::InvalidPercent(pct));
            }
        }
        Ok(Self { eta, mu, seed })
    }
}

/// Number of image-bearing posts to strip so that `keep_pct` percent remain.
pub fn masked_count(with_image: usize, keep_pct: u32) -> usize {
    let drop = (100 - keep_pct.min(100)) as usize;
    (drop * with_image).div_ceil(100)
}

fn mask_part(posts: &mut [Post], keep_pct: u32, seed: u64) {
    let with_image: Vec<usize> = (0..posts.len()).filter(|&i| posts[i].cmt).collect();
    let n_mask = masked_count(with_image.len(), keep_pct);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in rand::seq::index::sample(&mut rng, with_image.len(), n_mask) {
        let post = &mut posts[with_image[pick]];
        post.image_features = None;
        post.cmt = false;
    }
}

/// Strips images from exactly the required number of uniformly chosen
/// posts in each part. Stripped posts have `cmt = false` and no features;
/// run [`super::materialize_modalities`] afterwards to give them the pseudo
/// image.
pub fn apply_mask_pattern(mut split: Split, pattern: MaskPattern) -> Result<Split> {
    let pattern = MaskPattern::new(pattern.eta, pattern.mu, pattern.seed)?;
    let base = pattern.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    mask_part(&mut split.train, pattern.eta, base ^ 1);
    mask_part(&mut split.val, pattern.eta, base ^ 2);
    mask_part(&mut split.test, pattern.mu, base ^ 3);
    Ok(split)
}
