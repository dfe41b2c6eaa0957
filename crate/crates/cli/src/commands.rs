use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kdcn::config::KeyValues;
use kdcn::dataset::{generate_synthetic, write_entities, write_posts, SyntheticSpec};
use kdcn::model::{load_checkpoint, save_checkpoint};
use serde::Serialize;

use crate::experiment::{read_config_file, synthetic_spec_from, ExperimentConfig};
use crate::report::{eval_text, grid_text, train_text};
use crate::runner::{analysis, cross_validate, evaluate_model, run_grid};

pub const POSTS_FILE: &str = "posts.jsonl";
pub const ENTITIES_FILE: &str = "entities.tsv";

#[derive(Debug, Parser)]
#[command(name = "kdcn", version, about = "Multi-modal rumor detection with dual-consistency checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted inconsistencies.
    Synth(Common),
    /// Cross-validate, then checkpoint the best fold.
    Train(Common),
    /// Score a checkpoint on a dataset.
    Eval(Common),
    /// Train and test over the 6x6 image-retention grid.
    Grid(Common),
    /// Per-class entity-distance and similarity tests.
    Analyze(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// `key = value` config file; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Comma-separated switches, e.g. `no_ke,rm_pair=2`.
    #[arg(long)]
    pub ablation: Option<String>,
    /// Percent of training posts keeping their image.
    #[arg(long)]
    pub eta: Option<u32>,
    /// Percent of test posts keeping their image.
    #[arg(long)]
    pub mu: Option<u32>,
    /// Directory holding posts.jsonl and entities.tsv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic spec file, used instead of --data.
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Model checkpoint (eval, analyze).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Insist on the similarity section (analyze); needs --checkpoint.
    #[arg(long)]
    pub similarity: bool,
}

impl Common {
    /// Config file values overlaid with flags.
    pub fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(path) => read_config_file(path)?,
            None => KeyValues::default(),
        };
        if let Some(dir) = &self.data {
            kv.set("posts", dir.join(POSTS_FILE).display());
            kv.set("entities", dir.join(ENTITIES_FILE).display());
        }
        if let Some(s) = &self.synthetic {
            kv.set("synthetic", s.display());
        }
        let mut set = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(key, v);
            }
        };
        set("seed", self.seed.map(|v| v.to_string()));
        set("out", self.out.as_ref().map(|v| v.display().to_string()));
        set("folds", self.folds.map(|v| v.to_string()));
        set("ablation", self.ablation.clone());
        set("eta", self.eta.map(|v| v.to_string()));
        set("mu", self.mu.map(|v| v.to_string()));
        Ok(kv)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(c) => cmd_synth(&c).map(drop),
        Command::Train(c) => cmd_train(&c).map(drop),
        Command::Eval(c) => cmd_eval(&c).map(drop),
        Command::Grid(c) => cmd_grid(&c).map(drop),
        Command::Analyze(c) => cmd_analyze(&c).map(drop),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Resolved configuration and wall-clock time, kept apart from the
/// deterministic outputs.
fn write_run_info(out: &Path, command: &str, kv: &KeyValues) -> Result<()> {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    write_json(
        &out.join("run.json"),
        &serde_json::json!({
            "command": command,
            "finished_unix": unix,
            "version": env!("CARGO_PKG_VERSION"),
        }),
    )?;
    write(&out.join("config.txt"), &kv.to_string())
}

/// Writes `posts.jsonl` and `entities.tsv` into the output directory.
pub fn cmd_synth(c: &Common) -> Result<PathBuf> {
    let mut kv = match c.config.as_ref().or(c.synthetic.as_ref()) {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    if let Some(seed) = c.seed {
        kv.set("seed", seed);
    }
    let spec: SyntheticSpec = synthetic_spec_from(&kv)?;
    let out = c.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let (posts, table) = generate_synthetic(&spec)?;
    write_posts(&out.join(POSTS_FILE), &posts)?;
    write_entities(&out.join(ENTITIES_FILE), &table)?;
    write(&out.join("spec.txt"), &spec.to_key_values().to_string())?;
    println!("wrote {} posts and {} entities to {}", posts.len(), table.len(), out.display());
    Ok(out)
}

pub fn cmd_train(c: &Common) -> Result<PathBuf> {
    let kv = c.key_values()?;
    let cfg = ExperimentConfig::from_key_values(&kv)?;
    let (posts, table) = cfg.load_data()?;
    let cv = cross_validate(&cfg, &posts, &table)?;
    let out = &cfg.out;
    write_json(&out.join("metrics.json"), &cv.report)?;
    let text = train_text(&cv.report);
    write(&out.join("metrics.txt"), &text)?;
    let histories: Vec<_> = cv
        .histories
        .iter()
        .enumerate()
        .map(|(fold, h)| serde_json::json!({ "fold": fold, "history": h }))
        .collect();
    write_json(&out.join("history.json"), &histories)?;
    save_checkpoint(&out.join("checkpoint.json"), &cv.best_model, Some(&cfg.train))?;
    write_run_info(out, "train", &kv)?;
    print!("{text}");
    Ok(out.clone())
}

pub fn cmd_eval(c: &Common) -> Result<PathBuf> {
    let Some(ck) = &c.checkpoint else {
        bail!("eval needs --checkpoint");
    };
    let kv = c.key_values()?;
    let cfg = ExperimentConfig::from_key_values(&kv)?;
    let (model, _) = load_checkpoint(ck)?;
    let (posts, table) = cfg.load_data()?;
    let report = evaluate_model(&model, &posts, &table, cfg.mu, cfg.seed)?;
    let out = &cfg.out;
    write_json(&out.join("eval.json"), &report)?;
    let text = eval_text(&report);
    write(&out.join("eval.txt"), &text)?;
    write_run_info(out, "eval", &kv)?;
    print!("{text}");
    Ok(out.clone())
}

pub fn cmd_grid(c: &Common) -> Result<PathBuf> {
    let kv = c.key_values()?;
    let cfg = ExperimentConfig::from_key_values(&kv)?;
    let (posts, table) = cfg.load_data()?;
    let report = run_grid(&cfg, &posts, &table)?;
    let out = &cfg.out;
    write_json(&out.join("grid.json"), &report)?;
    let text = grid_text(&report);
    write(&out.join("grid.txt"), &text)?;
    write_run_info(out, "grid", &kv)?;
    print!("{text}");
    Ok(out.clone())
}

pub fn cmd_analyze(c: &Common) -> Result<PathBuf> {
    if c.similarity && c.checkpoint.is_none() {
        bail!("the similarity analysis needs a trained model; pass --checkpoint");
    }
    let kv = c.key_values()?;
    let cfg = ExperimentConfig::from_key_values(&kv)?;
    let model = match &c.checkpoint {
        Some(path) => Some(load_checkpoint(path)?.0),
        None => None,
    };
    let (posts, table) = cfg.load_data()?;
    let report = analysis(&posts, &table, model.as_ref(), cfg.seed)?;
    let out = &cfg.out;
    write(&out.join("analysis.json"), &(report.to_json() + "\n"))?;
    let text = report.to_text();
    write(&out.join("analysis.txt"), &text)?;
    write_run_info(out, "analyze", &kv)?;
    print!("{text}");
    Ok(out.clone())
}
