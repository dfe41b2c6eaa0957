//! Preliminary dual-inconsistency analysis: per-class entity-distance and
//! image-text similarity statistics, and one-tailed Welch tests on them.

use std::fmt::{self, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;

use crate::dataset::{EntityTable, Post};
use crate::error::{Error, Result};
use crate::knowledge::{post_seed, select_pairs};
use crate::model::{ModelParams, Prepared};

/// Alternative hypothesis for `mean(a) - mean(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Greater,
    Less,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Greater => ">",
            Direction::Less => "<",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// 95% interval for `mean(a) - mean(b)`.
    pub ci: (f64, f64),
    /// Cohen's d with pooled standard deviation.
    pub effect_size: f64,
    pub direction: Direction,
    pub reject_at_5pct: bool,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// `P(T <= t)` for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let lower = lower_tail(t, df);
    if t > 0.0 {
        1.0 - lower
    } else {
        lower
    }
}

/// `P(T <= -|t|)`, through the regularized incomplete beta function.
fn lower_tail(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    if t.is_infinite() {
        return 0.0;
    }
    0.5 * beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Quantile of Student's t.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Stats(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// One-tailed Welch two-sample test of `mean(a) - mean(b)` in `direction`.
pub fn welch_one_tailed(a: &[f64], b: &[f64], direction: Direction) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Stats(format!(
            "each sample needs at least 2 points, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Stats("samples contain non-finite values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;
    if se2 <= 0.0 {
        return Err(Error::Stats("both samples have zero variance".into()));
    }
    let se = se2.sqrt();
    let diff = ma - mb;
    let t = diff / se;
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));

    let tail = lower_tail(t, df);
    let p = match (direction, t > 0.0) {
        (Direction::Greater, true) | (Direction::Less, false) => tail,
        _ => 1.0 - tail,
    };
    let q = student_t_quantile(0.975, df)?;
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    Ok(TTestResult {
        t,
        df,
        p,
        ci: (diff - q * se, diff + q * se),
        effect_size: if pooled > 0.0 { diff / pooled } else { 0.0 },
        direction,
        reject_at_5pct: p < 0.05,
        mean_a: ma,
        mean_b: mb,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Per-post values split by label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ByClass {
    pub rumor: Vec<f64>,
    pub non_rumor: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl ClassSummary {
    fn of(xs: &[f64]) -> Self {
        match xs.len() {
            0 => Self { n: 0, mean: f64::NAN, sd: f64::NAN },
            1 => Self { n: 1, mean: xs[0], sd: 0.0 },
            n => {
                let (mean, var) = mean_var(xs);
                Self { n, mean, sd: var.sqrt() }
            }
        }
    }
}

impl ByClass {
    pub fn rumor_summary(&self) -> ClassSummary {
        ClassSummary::of(&self.rumor)
    }

    pub fn non_rumor_summary(&self) -> ClassSummary {
        ClassSummary::of(&self.non_rumor)
    }

    /// Up to `n` values per class, drawn without replacement.
    pub fn sample(&self, n: usize, seed: u64) -> ByClass {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |xs: &[f64]| -> Vec<f64> {
            let mut idx = rand::seq::index::sample(&mut rng, xs.len(), n.min(xs.len())).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| xs[i]).collect()
        };
        ByClass {
            rumor: draw(&self.rumor),
            non_rumor: draw(&self.non_rumor),
        }
    }
}

/// Sum of each post's `k` largest entity-pair distances, by class. Pair
/// selection and padding are exactly those the model uses.
pub fn entity_distance_stats(posts: &[Post], table: &EntityTable, k: usize, pair_seed: u64) -> Result<ByClass> {
    let mut out = ByClass::default();
    for post in posts {
        let vectors = table.vectors_for(&post.entity_ids)?;
        let sum = select_pairs(&vectors, k, post_seed(pair_seed, &post.id))?.distance_sum();
        if post.label.is_rumor() {
            out.rumor.push(sum);
        } else {
            out.non_rumor.push(sum);
        }
    }
    Ok(out)
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `cos(T_u, I_u)` per post from a trained model, by class.
pub fn similarity_stats(params: &ModelParams, posts: &[Prepared]) -> Result<ByClass> {
    let mut out = ByClass::default();
    for post in posts {
        let f = params.forward(post)?;
        let c = cosine(&f.t_u, &f.i_u);
        if post.label >= 0.5 {
            out.rumor.push(c);
        } else {
            out.non_rumor.push(c);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub rumor: ClassSummary,
    pub non_rumor: ClassSummary,
    /// Rumor versus non-rumor on the sampled subsets.
    pub test: TTestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub per_class_sample: usize,
    pub seed: u64,
    pub k: usize,
    pub distance: Section,
    pub similarity: Option<Section>,
}

pub const DEFAULT_PER_CLASS_SAMPLE: usize = 50;

fn section(values: &ByClass, per_class: usize, seed: u64, direction: Direction) -> Result<Section> {
    let s = values.sample(per_class, seed);
    Ok(Section {
        rumor: values.rumor_summary(),
        non_rumor: values.non_rumor_summary(),
        test: welch_one_tailed(&s.rumor, &s.non_rumor, direction)?,
    })
}

/// Distance section always; similarity section when a model is given.
/// Rumors are expected to have larger distance sums and smaller
/// similarity.
pub fn analyze(
    posts: &[Post],
    table: &EntityTable,
    model: Option<&ModelParams>,
    per_class: usize,
    seed: u64,
) -> Result<AnalysisReport> {
    let (k, pair_seed) = model.map_or((crate::knowledge::DEFAULT_TOP_K, seed), |m| (m.hyper.k, m.hyper.pair_seed));
    let distances = entity_distance_stats(posts, table, k, pair_seed)?;
    let distance = section(&distances, per_class, seed, Direction::Greater)?;
    let similarity = match model {
        Some(m) => {
            let prepared = m.prepare(posts, table)?;
            let sims = similarity_stats(m, &prepared)?;
            Some(section(&sims, per_class, seed.wrapping_add(1), Direction::Less)?)
        }
        None => None,
    };
    Ok(AnalysisReport {
        per_class_sample: per_class,
        seed,
        k,
        distance,
        similarity,
    })
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        write_section(
            &mut out,
            &format!("entity distance (sum of top-{} Manhattan distances)", self.k),
            &self.distance,
            self.per_class_sample,
        );
        if let Some(s) = &self.similarity {
            out.push('\n');
            write_section(&mut out, "image-text similarity (cosine of T_u, I_u)", s, self.per_class_sample);
        }
        out
    }
}

fn write_section(out: &mut String, title: &str, s: &Section, per_class: usize) {
    let t = &s.test;
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "{:<10} {:>6} {:>12} {:>12}", "class", "n", "mean", "sd");
    for (name, c) in [("rumor", &s.rumor), ("non-rumor", &s.non_rumor)] {
        let _ = writeln!(out, "{:<10} {:>6} {:>12.4} {:>12.4}", name, c.n, c.mean, c.sd);
    }
    let _ = writeln!(
        out,
        "Welch one-tailed, H1: rumor {} non-rumor, {per_class} + {per_class} sampled",
        t.direction
    );
    let _ = writeln!(
        out,
        "{:>9} {:>8} {:>10} {:>24} {:>8} {:>10}",
        "t", "df", "p", "95% CI", "d", "reject@5%"
    );
    let ci = format!("[{:.4}, {:.4}]", t.ci.0, t.ci.1);
    let _ = writeln!(
        out,
        "{:>9.3} {:>8.2} {:>10.6} {:>24} {:>8.3} {:>10}",
        t.t,
        t.df,
        t.p,
        ci,
        t.effect_size,
        if t.reject_at_5pct { "yes" } else { "no" }
    );
}
