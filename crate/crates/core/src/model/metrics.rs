use serde::{Deserialize, Serialize};

use super::{ModelParams, Prepared};
use crate::error::Result;

/// Binary classification scores with rumor as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    /// Thresholds probabilities at 0.5.
    pub fn from_predictions(probs: &[f64], labels: &[f64]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= 0.5, y >= 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn evaluate(params: &ModelParams, posts: &[Prepared]) -> Result<Metrics> {
    let probs = params.predict(posts)?;
    let labels: Vec<f64> = posts.iter().map(|p| p.label).collect();
    Ok(Metrics::from_predictions(&probs, &labels))
}
