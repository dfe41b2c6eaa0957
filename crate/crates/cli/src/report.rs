//! Aligned text renderings of the JSON reports.

use std::fmt::Write as _;

use kdcn::model::Metrics;

use crate::runner::{EvalReport, GridReport, TrainReport};

fn metrics_header(out: &mut String, first: &str) {
    let _ = writeln!(
        out,
        "{first:<8} {:>9} {:>9} {:>9} {:>9} {:>5} {:>5} {:>5} {:>5}",
        "accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"
    );
}

fn metrics_row(out: &mut String, first: &str, m: &Metrics) {
    let _ = writeln!(
        out,
        "{first:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>5} {:>5} {:>5} {:>5}",
        m.accuracy, m.precision, m.recall, m.f1, m.tp, m.fp, m.tn, m.fn_
    );
}

pub fn train_text(r: &TrainReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model: {}  folds: {}  seed: {}  images kept: train {}% / test {}%",
        r.model,
        r.folds.len(),
        r.seed,
        r.eta,
        r.mu
    );
    metrics_header(&mut out, "fold");
    for f in &r.folds {
        metrics_row(&mut out, &f.fold.to_string(), &f.metrics);
    }
    let _ = writeln!(
        out,
        "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        "mean", r.mean.accuracy, r.mean.precision, r.mean.recall, r.mean.f1
    );
    let _ = writeln!(
        out,
        "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        "std", r.std.accuracy, r.std.precision, r.std.recall, r.std.f1
    );
    let _ = writeln!(out, "checkpoint from fold {}", r.best_fold);
    out
}

pub fn eval_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}  posts: {}  images kept: {}%", r.model, r.posts, r.mu);
    metrics_header(&mut out, "");
    metrics_row(&mut out, "", &r.metrics);
    out
}

/// Shade glyph for an accuracy, darker is better.
fn shade(acc: f64) -> char {
    const RAMP: [char; 5] = [' ', '.', ':', '+', '#'];
    let x = ((acc - 0.5) / 0.5).clamp(0.0, 1.0);
    RAMP[((x * (RAMP.len() - 1) as f64).round()) as usize]
}

pub fn grid_text(r: &GridReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "test accuracy, model: {}  seed: {}", r.model, r.seed);
    let _ = write!(out, "{:>10}", "eta \\ mu");
    for mu in &r.mus {
        let _ = write!(out, " {mu:>8}");
    }
    out.push('\n');
    for (eta, row) in r.etas.iter().zip(&r.accuracy) {
        let _ = write!(out, "{eta:>10}");
        for &acc in row {
            let _ = write!(out, " {acc:>6.4} {}", shade(acc));
        }
        out.push('\n');
    }
    out
}
