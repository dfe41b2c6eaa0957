use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, total_loss, ModelParams, Prepared};
use crate::config::{ConfigError, KeyValues};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub stop_patience: usize,
    /// Epochs without improvement before the learning rate is cut.
    pub lr_patience: usize,
    pub lr_factor: f64,
    /// Weight of the orthogonality penalty.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0005,
            batch_size: 64,
            max_epochs: 50,
            stop_patience: 10,
            lr_patience: 5,
            lr_factor: 0.5,
            lambda: 1.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 8] = [
        "lr",
        "batch_size",
        "max_epochs",
        "stop_patience",
        "lr_patience",
        "lr_factor",
        "lambda",
        "seed",
    ];

    /// Reads known keys from `kv`, falling back to defaults. Unknown keys
    /// are left for the caller to police.
    pub fn from_key_values(kv: &KeyValues) -> std::result::Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            lr: kv.get_or("lr", d.lr)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_epochs: kv.get_or("max_epochs", d.max_epochs)?,
            stop_patience: kv.get_or("stop_patience", d.stop_patience)?,
            lr_patience: kv.get_or("lr_patience", d.lr_patience)?,
            lr_factor: kv.get_or("lr_factor", d.lr_factor)?,
            lambda: kv.get_or("lambda", d.lambda)?,
            seed: kv.get_or("seed", d.seed)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad("lr_factor must lie in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// One update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].as_ref().map(Tensor::data);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean classification loss per training post.
    pub train_loss: f64,
    /// Orthogonality penalty at the end of the epoch.
    pub l_o: f64,
    pub val_accuracy: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_l_o: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn final_l_o(&self) -> f64 {
        self.epochs.last().map_or(self.initial_l_o, |e| e.l_o)
    }
}

/// Trains `model` and returns the parameters with the best validation
/// accuracy along with the per-epoch history.
pub fn train(
    config: &TrainConfig,
    mut model: ModelParams,
    train_posts: &[Prepared],
    val_posts: &[Prepared],
) -> Result<(ModelParams, History)> {
    config.validate()?;
    if train_posts.is_empty() || val_posts.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let lambda = if model.ablation.no_orth { 0.0 } else { config.lambda };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model.tensors());
    let mut lr = config.lr;
    let mut order: Vec<usize> = (0..train_posts.len()).collect();

    let mut history = History {
        initial_l_o: model.orthogonal_loss(),
        best_val_accuracy: f64::NEG_INFINITY,
        ..History::default()
    };
    let mut best = model.clone();
    let (mut stale, mut lr_stale) = (0usize, 0usize);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_posts[i]).collect();
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let loss = total_loss(&mut tape, &vars, &batch, &model.ablation, lambda)?;
            let total = tape.value(loss.total).data()[0];
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: total,
                    epoch,
                    batch: b,
                    first_post: batch[0].id.clone(),
                });
            }
            loss_sum += tape.value(loss.classification).data()[0];
            let mut grads = tape.backward(loss.total)?;
            let grads: Vec<Option<Tensor>> = vars.all().iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut model.tensors_mut(), &grads, lr);
        }

        let val_accuracy = evaluate(&model, val_posts)?.accuracy;
        let improved = val_accuracy > history.best_val_accuracy;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_posts.len() as f64,
            l_o: model.orthogonal_loss(),
            val_accuracy,
            lr,
            improved,
        });
        log::debug!("epoch {epoch}: loss {:.4} val acc {val_accuracy:.4}", loss_sum / train_posts.len() as f64);

        if improved {
            history.best_val_accuracy = val_accuracy;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
            lr_stale = 0;
        } else {
            stale += 1;
            lr_stale += 1;
            if stale >= config.stop_patience.max(1) {
                history.stopped_early = true;
                break;
            }
            if lr_stale >= config.lr_patience.max(1) {
                lr *= config.lr_factor;
                lr_stale = 0;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};
    use crate::model::{Ablation, HyperParams};

    fn data(n: usize, seed: u64) -> (ModelParams, Vec<Prepared>) {
        let spec = SyntheticSpec {
            n_posts: n,
            vocab: 40,
            n_entities: 12,
            d_i: 8,
            seed,
            ..SyntheticSpec::default()
        };
        let (posts, table) = generate_synthetic(&spec).unwrap();
        let mut h = HyperParams::new(spec.vocab, spec.d_i);
        h.d_w = 8;
        h.d0 = 8;
        h.d = 16;
        h.d_u = 8;
        let m = ModelParams::init(h, Ablation::default(), seed).unwrap();
        let p = m.prepare(&posts, &table).unwrap();
        (m, p)
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let mut adam = Adam::new(&[&w]);
        let g = Tensor::vector(vec![3.0, -0.1, 0.0]);
        adam.step(&mut [&mut w], &[Some(g)], 0.01);
        assert!((w.data()[0] - 0.99).abs() < 1e-9);
        assert!((w.data()[1] + 1.99).abs() < 1e-9);
        assert_eq!(w.data()[2], 0.5);
    }

    #[test]
    fn repeated_batch_loss_does_not_increase() {
        for seed in [1, 2, 3] {
            let (mut m, p) = data(16, seed);
            let batch: Vec<&Prepared> = p.iter().collect();
            let mut adam = Adam::new(&m.tensors());
            let mut last = f64::INFINITY;
            for step in 0..20 {
                let mut tape = Tape::new();
                let vars = m.bind(&mut tape, true);
                let loss = total_loss(&mut tape, &vars, &batch, &m.ablation, 1.5).unwrap();
                let value = tape.value(loss.total).data()[0];
                assert!(value <= last + 1e-9, "seed {seed} step {step}: {value} > {last}");
                last = value;
                let mut g = tape.backward(loss.total).unwrap();
                let grads: Vec<Option<Tensor>> = vars.all().iter().map(|&v| g.take(v)).collect();
                adam.step(&mut m.tensors_mut(), &grads, 0.0005);
            }
        }
    }

    #[test]
    fn deterministic_and_patience_zero_stops() {
        let (m, p) = data(40, 7);
        let cfg = TrainConfig {
            max_epochs: 3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&cfg, m.clone(), &p[..30], &p[30..]).unwrap();
        let (b, hb) = train(&cfg, m.clone(), &p[..30], &p[30..]).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert!(ha.epochs.len() <= 3);

        let cfg = TrainConfig {
            max_epochs: 20,
            batch_size: 8,
            stop_patience: 0,
            ..TrainConfig::default()
        };
        let (_, h) = train(&cfg, m, &p[..30], &p[30..]).unwrap();
        let first_bad = h.epochs.iter().position(|e| !e.improved);
        assert_eq!(first_bad.map(|i| i + 1), Some(h.epochs.len()));
        assert!(h.stopped_early);
    }

    #[test]
    fn lr_is_cut_after_stale_epochs() {
        let (m, p) = data(30, 8);
        let cfg = TrainConfig {
            lr: 1e-12,
            max_epochs: 6,
            batch_size: 30,
            stop_patience: 100,
            lr_patience: 2,
            ..TrainConfig::default()
        };
        let (_, h) = train(&cfg, m, &p[..20], &p[20..]).unwrap();
        // frozen weights: only epoch 1 improves
        let lrs: Vec<f64> = h.epochs.iter().map(|e| e.lr).collect();
        assert_eq!(lrs, vec![1e-12, 1e-12, 1e-12, 5e-13, 5e-13, 2.5e-13]);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let kv = KeyValues::parse("lr = 0.00005\nbatch_size = 128\n").unwrap();
        let c = TrainConfig::from_key_values(&kv).unwrap();
        assert_eq!((c.lr, c.batch_size, c.lambda), (0.00005, 128, 1.5));
        let bad = TrainConfig {
            lambda: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
