use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Post, Result};

pub const MIN_POSTS_FOR_SPLIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 6,
            val: 2,
            test: 2,
        }
    }
}

impl SplitRatio {
    fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<Post>,
    pub val: Vec<Post>,
    pub test: Vec<Post>,
}

/// `round(n * part / total)` with halves rounded up.
fn share(n: usize, part: usize, total: usize) -> usize {
    (2 * n * part + total) / (2 * total)
}

/// Index partitions `(train, val, test)` for each fold. The posts are
/// shuffled once; fold `f` takes its test window at offset `f * n / folds`
/// and the validation window right after it (wrapping). When the test
/// share is exactly `1 / folds` each window runs up to the next fold's
/// offset, so the test sets tile the data.
pub fn split_indices(
    n: usize,
    ratio: SplitRatio,
    folds: usize,
    seed: u64,
) -> Result<Vec<[Vec<usize>; 3]>> {
    if n < MIN_POSTS_FOR_SPLIT {
        return Err(DataError::TooFewPosts {
            needed: MIN_POSTS_FOR_SPLIT,
            got: n,
        });
    }
    if folds == 0 || ratio.train == 0 || ratio.val == 0 || ratio.test == 0 {
        return Err(DataError::InvalidSplit(format!(
            "folds={folds}, ratio={}:{}:{}",
            ratio.train, ratio.val, ratio.test
        )));
    }
    let test_n = share(n, ratio.test, ratio.total()).max(1);
    let val_n = share(n, ratio.val, ratio.total()).max(1);
    if test_n + val_n >= n {
        return Err(DataError::InvalidSplit(format!(
            "{n} posts leave no training data"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let tile = folds * ratio.test == ratio.total();
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let offset = share(n, f, folds);
        let test_n = if tile { share(n, f + 1, folds) - offset } else { test_n };
        let mut parts = [Vec::new(), Vec::new(), Vec::new()];
        for pos in 0..n {
            let rel = (pos + n - offset) % n;
            let bucket = if rel < test_n {
                2
            } else if rel < test_n + val_n {
                1
            } else {
                0
            };
            parts[bucket].push(order[pos]);
        }
        out.push(parts);
    }
    Ok(out)
}

/// Train/validation/test partitions for `folds`-fold cross-validation.
pub fn make_splits(posts: &[Post], ratio: SplitRatio, folds: usize, seed: u64) -> Result<Vec<Split>> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| posts[i].clone()).collect::<Vec<_>>();
    Ok(split_indices(posts.len(), ratio, folds, seed)?
        .into_iter()
        .map(|[train, val, test]| Split {
            train: pick(&train),
            val: pick(&val),
            test: pick(&test),
        })
        .collect())
}
