//! Config resolution: defaults, then the config file, then flags.
//!
//! Config-file keys, CLI flag names, and the keys embedded in output meta
//! blocks are all the same kebab-cased field names, so a key seen in any
//! output can be pasted straight back into a config file or flag.

use std::fs;
use std::path::Path;

use clap::Args;
use hic_core::config::{AttentionModeCfg, LinkageCfg};
use hic_core::{Error, Result, RunConfig};

/// Per-field config overrides, all optional and usable after any subcommand.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    /// Top-level seed; every random stage derives its stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Attention hidden width.
    #[arg(long, global = true)]
    pub attention_dim: Option<usize>,
    /// Attention weighting: per-dim | per-utterance | off.
    #[arg(long, global = true, value_parser = parse_mode)]
    pub attention_mode: Option<AttentionModeCfg>,
    /// Leaf-cluster budget; the run uses k = min(sqrt(n), k-max).
    #[arg(long, global = true)]
    pub k_max: Option<usize>,
    /// Nearest live clusters consulted per merge proposal.
    #[arg(long, global = true)]
    pub ann_neighbors: Option<usize>,
    /// Merge-threshold anneal factor, in (0, 1).
    #[arg(long, global = true)]
    pub anneal_factor: Option<f64>,
    /// Merge-threshold floor as a fraction of the initial threshold.
    #[arg(long, global = true)]
    pub anneal_floor_frac: Option<f64>,
    /// Merge cost: ward-attention | dist-entropy.
    #[arg(long, global = true, value_parser = parse_linkage)]
    pub linkage: Option<LinkageCfg>,
    /// Cluster size that triggers split refinement after a merge.
    #[arg(long, global = true)]
    pub split_threshold: Option<usize>,
    /// Relative improvement tolerance that stops split refinement.
    #[arg(long, global = true)]
    pub refine_tol: Option<f64>,
    /// Epochs of reconstruction pre-training.
    #[arg(long, global = true)]
    pub epochs_pretrain: Option<usize>,
    /// Epochs of KL fine-tuning.
    #[arg(long, global = true)]
    pub epochs_dec: Option<usize>,
    #[arg(long, global = true)]
    pub lr_pretrain: Option<f64>,
    #[arg(long, global = true)]
    pub lr_dec: Option<f64>,
    /// Assignment confidence below this counts as low-confidence.
    #[arg(long, global = true)]
    pub confidence_delta: Option<f64>,
    /// Train fraction of the stratified train/validation split.
    #[arg(long, global = true)]
    pub split_ratio: Option<f64>,
}

pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = file {
        apply_file(&mut cfg, path)?;
    }
    overlay(&mut cfg, o);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_file(cfg: &mut RunConfig, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("config file {}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!(
                "{} line {}: expected `key = value`",
                path.display(),
                lineno + 1
            ))
        })?;
        apply_kv(cfg, key.trim(), value.trim()).map_err(|msg| {
            Error::InvalidConfig(format!("{} line {}: {msg}", path.display(), lineno + 1))
        })?;
    }
    Ok(())
}

fn apply_kv(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        v.parse().map_err(|e| format!("{key}: {e}"))
    }
    match key {
        "attention-dim" => cfg.attention_dim = num(key, value)?,
        "attention-mode" => cfg.attention_mode = parse_mode(value)?,
        "k-max" => cfg.k_max = num(key, value)?,
        "ann-neighbors" => cfg.ann_neighbors = num(key, value)?,
        "anneal-factor" => cfg.anneal_factor = num(key, value)?,
        "anneal-floor-frac" => cfg.anneal_floor_frac = num(key, value)?,
        "linkage" => cfg.linkage = parse_linkage(value)?,
        "split-threshold" => cfg.split_threshold = num(key, value)?,
        "refine-tol" => cfg.refine_tol = num(key, value)?,
        "epochs-pretrain" => cfg.epochs_pretrain = num(key, value)?,
        "epochs-dec" => cfg.epochs_dec = num(key, value)?,
        "lr-pretrain" => cfg.lr_pretrain = num(key, value)?,
        "lr-dec" => cfg.lr_dec = num(key, value)?,
        "confidence-delta" => cfg.confidence_delta = num(key, value)?,
        "split-ratio" => cfg.split_ratio = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        _ => return Err(format!("unknown config key {key:?}")),
    }
    Ok(())
}

fn overlay(cfg: &mut RunConfig, o: &Overrides) {
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.attention_dim {
        cfg.attention_dim = v;
    }
    if let Some(v) = o.attention_mode {
        cfg.attention_mode = v;
    }
    if let Some(v) = o.k_max {
        cfg.k_max = v;
    }
    if let Some(v) = o.ann_neighbors {
        cfg.ann_neighbors = v;
    }
    if let Some(v) = o.anneal_factor {
        cfg.anneal_factor = v;
    }
    if let Some(v) = o.anneal_floor_frac {
        cfg.anneal_floor_frac = v;
    }
    if let Some(v) = o.linkage {
        cfg.linkage = v;
    }
    if let Some(v) = o.split_threshold {
        cfg.split_threshold = v;
    }
    if let Some(v) = o.refine_tol {
        cfg.refine_tol = v;
    }
    if let Some(v) = o.epochs_pretrain {
        cfg.epochs_pretrain = v;
    }
    if let Some(v) = o.epochs_dec {
        cfg.epochs_dec = v;
    }
    if let Some(v) = o.lr_pretrain {
        cfg.lr_pretrain = v;
    }
    if let Some(v) = o.lr_dec {
        cfg.lr_dec = v;
    }
    if let Some(v) = o.confidence_delta {
        cfg.confidence_delta = v;
    }
    if let Some(v) = o.split_ratio {
        cfg.split_ratio = v;
    }
}

fn parse_mode(s: &str) -> std::result::Result<AttentionModeCfg, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        format!("unknown attention mode {s:?} (expected per-dim, per-utterance, or off)")
    })
}

fn parse_linkage(s: &str) -> std::result::Result<LinkageCfg, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown linkage {s:?} (expected ward-attention or dist-entropy)"))
}
