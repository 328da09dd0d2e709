//! Engine configuration shared by the library pipeline and the CLI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable in one place. Field names double as CLI flag names
/// (kebab-cased) and config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, rename_all = "kebab-case")]
pub struct RunConfig {
    /// Attention hidden width.
    pub attention_dim: usize,
    /// Attention weighting mode.
    pub attention_mode: AttentionModeCfg,
    /// Upper bound on the adaptive leaf-cluster count k = min(sqrt(n), k_max).
    pub k_max: usize,
    /// ANN neighbors consulted per cluster when seeding merge candidates.
    pub ann_neighbors: usize,
    /// Annealing factor applied to the merge threshold on each rejection.
    pub anneal_factor: f64,
    /// Merge-threshold floor, as a fraction of the initial threshold.
    pub anneal_floor_frac: f64,
    /// Linkage used for merge costs.
    pub linkage: LinkageCfg,
    /// Cluster size above which a fresh merge is split and refined.
    pub split_threshold: usize,
    /// Relative WCSS-decrease tolerance that stops the refinement loop.
    pub refine_tol: f64,
    /// Epochs of reconstruction pre-training.
    pub epochs_pretrain: usize,
    /// Epochs of KL fine-tuning.
    pub epochs_dec: usize,
    pub lr_pretrain: f64,
    pub lr_dec: f64,
    /// Assignments with confidence below this count as low-confidence.
    pub confidence_delta: f64,
    /// Train fraction for the one-shot stratified split.
    pub split_ratio: f64,
    /// Top-level seed; all module RNG streams derive from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            attention_dim: 64,
            attention_mode: AttentionModeCfg::PerDim,
            k_max: 200,
            ann_neighbors: 10,
            anneal_factor: 0.95,
            anneal_floor_frac: 0.05,
            linkage: LinkageCfg::WardAttention,
            split_threshold: 100,
            refine_tol: 1e-3,
            epochs_pretrain: 100,
            epochs_dec: 50,
            lr_pretrain: 1e-2,
            lr_dec: 1e-3,
            confidence_delta: 0.1,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidConfig(msg))
        }
        if self.attention_dim == 0 {
            return bad("attention-dim must be positive".into());
        }
        if self.k_max == 0 {
            return bad("k-max must be positive".into());
        }
        if self.ann_neighbors == 0 {
            return bad("ann-neighbors must be positive".into());
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return bad(format!(
                "anneal-factor must be in (0, 1), got {}",
                self.anneal_factor
            ));
        }
        if !(self.anneal_floor_frac > 0.0) {
            return bad("anneal-floor-frac must be positive".into());
        }
        if !(self.refine_tol > 0.0) {
            return bad("refine-tol must be positive".into());
        }
        if !(self.lr_pretrain > 0.0 && self.lr_dec > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.confidence_delta >= 0.0 && self.confidence_delta <= 1.0) {
            return bad(format!(
                "confidence-delta must be in [0, 1], got {}",
                self.confidence_delta
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!(
                "split-ratio must be in (0, 1), got {}",
                self.split_ratio
            ));
        }
        Ok(())
    }
}

/// Serializable twin of [`crate::attention::AttentionMode`]; kept separate so
/// the math types stay serde-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionModeCfg {
    PerDim,
    PerUtterance,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkageCfg {
    WardAttention,
    DistEntropy,
}

/// Per-module seed offsets. Every RNG in the engine is seeded with
/// `base_seed + offset` (wrapping), so one top-level seed reproduces the whole
/// run and no two modules share a stream.
pub mod seeds {
    pub const SYNTH: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const ATTENTION_INIT: u64 = 4;
    pub const DEC_INIT: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const ANN_INDEX: u64 = 7;
    pub const REFINE: u64 = 8;
    pub const METRIC_SAMPLE: u64 = 9;

    pub fn derive(base: u64, offset: u64) -> u64 {
        base.wrapping_add(offset)
    }
}
