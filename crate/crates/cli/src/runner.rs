//! Cross-validation, the missing-modality grid, evaluation and analysis,
//! independent of files and flags.

use anyhow::{ensure, Context, Result};
use kdcn::analysis::{analyze, AnalysisReport, DEFAULT_PER_CLASS_SAMPLE};
use kdcn::dataset::{
    apply_mask_pattern, make_splits, materialize_modalities, EntityTable, MaskPattern, Post, Split, SplitRatio,
    MASK_GRID,
};
use kdcn::model::{evaluate, train, HyperParams, History, Metrics, ModelParams};
use serde::{Deserialize, Serialize};

use crate::experiment::{image_dim, ExperimentConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_accuracy: f64,
    pub initial_l_o: f64,
    pub final_l_o: f64,
}

/// Accuracy, precision, recall and F1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    fn of(m: &Metrics) -> Self {
        Self {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }

    fn map(rows: &[Scores], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&Scores) -> f64| f(&rows.iter().map(g).collect::<Vec<_>>());
        Self {
            accuracy: col(|s| s.accuracy),
            precision: col(|s| s.precision),
            recall: col(|s| s.recall),
            f1: col(|s| s.f1),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Ablation description, `full` for the complete model.
    pub model: String,
    pub hyper: HyperParams,
    pub train: kdcn::model::TrainConfig,
    pub seed: u64,
    pub eta: u32,
    pub mu: u32,
    pub folds: Vec<FoldRecord>,
    pub mean: Scores,
    pub std: Scores,
    /// Fold whose model is checkpointed: best validation accuracy.
    pub best_fold: usize,
}

pub struct CrossValidation {
    pub report: TrainReport,
    pub histories: Vec<History>,
    pub best_model: ModelParams,
}

/// Fold seed: model initialization and shuffling.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}

/// Mask seed for one grid cell, so every cell draws its own masks.
pub fn cell_seed(seed: u64, eta: u32, mu: u32) -> u64 {
    seed ^ ((u64::from(eta) << 40) | (u64::from(mu) << 20))
}

fn masked(split: Split, eta: u32, mu: u32, seed: u64, d_i: usize) -> Result<Split> {
    let mut s = apply_mask_pattern(split, MaskPattern::new(eta, mu, seed)?)?;
    for part in [&mut s.train, &mut s.val, &mut s.test] {
        materialize_modalities(part, d_i);
    }
    Ok(s)
}

struct FoldOutcome {
    metrics: Metrics,
    history: History,
    model: ModelParams,
}

fn run_split(
    cfg: &ExperimentConfig,
    hyper: &HyperParams,
    split: &Split,
    table: &EntityTable,
    model_seed: u64,
) -> Result<FoldOutcome> {
    let model = ModelParams::init(hyper.clone(), cfg.ablation, model_seed)?;
    let train_set = model.prepare(&split.train, table)?;
    let val_set = model.prepare(&split.val, table)?;
    let test_set = model.prepare(&split.test, table)?;
    let mut tc = cfg.train.clone();
    tc.seed = model_seed;
    let (best, history) = train(&tc, model, &train_set, &val_set)?;
    let metrics = evaluate(&best, &test_set)?;
    Ok(FoldOutcome {
        metrics,
        history,
        model: best,
    })
}

/// `cfg.folds`-fold cross-validation with the configured image retention.
pub fn cross_validate(cfg: &ExperimentConfig, posts: &[Post], table: &EntityTable) -> Result<CrossValidation> {
    let hyper = cfg.hyper_for(posts, table)?;
    let splits = make_splits(posts, SplitRatio::default(), cfg.folds, cfg.seed)?;
    let mut records = Vec::new();
    let mut histories = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for (fold, split) in splits.into_iter().enumerate() {
        let seed = fold_seed(cfg.seed, fold);
        let split = masked(split, cfg.eta, cfg.mu, cell_seed(seed, cfg.eta, cfg.mu), hyper.d_i)?;
        let out = run_split(cfg, &hyper, &split, table, seed).with_context(|| format!("fold {fold}"))?;
        let h = &out.history;
        log::info!(
            "fold {fold}: test accuracy {:.4} after {} epochs (best {})",
            out.metrics.accuracy,
            h.epochs.len(),
            h.best_epoch
        );
        records.push(FoldRecord {
            fold,
            seed,
            metrics: out.metrics,
            best_epoch: h.best_epoch,
            epochs_run: h.epochs.len(),
            best_val_accuracy: h.best_val_accuracy,
            initial_l_o: h.initial_l_o,
            final_l_o: h.final_l_o(),
        });
        if best.as_ref().is_none_or(|b| h.best_val_accuracy > b.1) {
            best = Some((fold, h.best_val_accuracy, out.model));
        }
        histories.push(out.history);
    }
    let scores: Vec<Scores> = records.iter().map(|r| Scores::of(&r.metrics)).collect();
    let (best_fold, _, best_model) = best.expect("at least one fold");
    Ok(CrossValidation {
        report: TrainReport {
            model: cfg.ablation.to_string(),
            hyper,
            train: cfg.train.clone(),
            seed: cfg.seed,
            eta: cfg.eta,
            mu: cfg.mu,
            folds: records,
            mean: Scores::map(&scores, mean),
            std: Scores::map(&scores, std_dev),
            best_fold,
        },
        histories,
        best_model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub eta: u32,
    pub mu: u32,
    pub metrics: Metrics,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub model: String,
    pub seed: u64,
    /// Row labels: percent of training posts keeping their image.
    pub etas: Vec<u32>,
    /// Column labels: percent of test posts keeping their image.
    pub mus: Vec<u32>,
    /// `accuracy[row][col]`.
    pub accuracy: Vec<Vec<f64>>,
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn cell(&self, eta: u32, mu: u32) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.eta == eta && c.mu == mu)
    }
}

/// Trains and tests one model per `(eta, mu)` on the first split. Every
/// cell starts from the same initialization; only the masks differ.
pub fn run_grid(cfg: &ExperimentConfig, posts: &[Post], table: &EntityTable) -> Result<GridReport> {
    ensure!(image_dim(posts).is_some(), "the grid needs a dataset with images");
    ensure!(posts.iter().all(|p| p.cmt), "the grid needs a modal-complete dataset");
    let hyper = cfg.hyper_for(posts, table)?;
    let split = make_splits(posts, SplitRatio::default(), 1, cfg.seed)?.remove(0);
    let mut cells = Vec::new();
    let mut accuracy = vec![vec![f64::NAN; MASK_GRID.len()]; MASK_GRID.len()];
    for (r, &eta) in MASK_GRID.iter().enumerate() {
        for (c, &mu) in MASK_GRID.iter().enumerate() {
            let s = masked(split.clone(), eta, mu, cell_seed(cfg.seed, eta, mu), hyper.d_i)?;
            let out = run_split(cfg, &hyper, &s, table, cfg.seed).with_context(|| format!("cell eta={eta} mu={mu}"))?;
            ensure!(out.metrics.accuracy.is_finite(), "cell eta={eta} mu={mu} produced a non-finite accuracy");
            log::info!("eta {eta:3} mu {mu:3}: accuracy {:.4}", out.metrics.accuracy);
            accuracy[r][c] = out.metrics.accuracy;
            cells.push(GridCell {
                eta,
                mu,
                metrics: out.metrics,
                epochs_run: out.history.epochs.len(),
            });
        }
    }
    Ok(GridReport {
        model: cfg.ablation.to_string(),
        seed: cfg.seed,
        etas: MASK_GRID.to_vec(),
        mus: MASK_GRID.to_vec(),
        accuracy,
        cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub posts: usize,
    pub mu: u32,
    pub metrics: Metrics,
}

/// Scores a trained model on every post, keeping images on `mu` percent.
pub fn evaluate_model(model: &ModelParams, posts: &[Post], table: &EntityTable, mu: u32, seed: u64) -> Result<EvalReport> {
    let split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: posts.to_vec(),
    };
    let s = masked(split, 100, mu, cell_seed(seed, 100, mu), model.hyper.d_i)?;
    let prepared = model.prepare(&s.test, table)?;
    Ok(EvalReport {
        model: model.ablation.to_string(),
        posts: prepared.len(),
        mu,
        metrics: evaluate(model, &prepared)?,
    })
}

/// Distance analysis, plus the similarity analysis when a model is given.
pub fn analysis(posts: &[Post], table: &EntityTable, model: Option<&ModelParams>, seed: u64) -> Result<AnalysisReport> {
    let mut posts = posts.to_vec();
    if let Some(m) = model {
        materialize_modalities(&mut posts, m.hyper.d_i);
    }
    Ok(analyze(&posts, table, model, DEFAULT_PER_CLASS_SAMPLE, seed)?)
}
