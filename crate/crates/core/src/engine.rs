//! One-shot clustering pipeline: train the attention layer on the corpus,
//! enhance the embeddings, flat-cluster with the adaptive cluster count,
//! agglomerate into a hierarchy, and pick leaf prototypes. Every stage
//! derives its randomness from the run seed plus a fixed offset, so one
//! config value reproduces the whole run.

use crate::ann::{adaptive_k, ann_kmeans, AnnConfig, ClusterSet};
use crate::attention::{
    attention_forward, finetune_dec, pretrain_reconstruction, AttentionMode, AttentionParams,
    EnhancedEmbeddings, TrainOptions, TrainReport, TARGET_REFRESH_PERIOD,
};
use crate::config::{seeds, RunConfig};
use crate::corpus::Corpus;
use crate::error::Result;
use crate::hierarchy::{
    assign, build_hierarchy, select_prototypes, Hierarchy, MergeConfig, MergeStats, Prototypes,
};
use crate::scalar::Scalar;

/// Everything a clustering run produces, kept together so callers can
/// serialize, measure, or compare without re-deriving anything.
#[derive(Debug, Clone)]
pub struct ClusterOutcome<S> {
    pub params: AttentionParams<S>,
    pub enhanced: EnhancedEmbeddings<S>,
    pub clusters: ClusterSet<S>,
    pub hierarchy: Hierarchy<S>,
    pub prototypes: Prototypes,
    pub merge_stats: MergeStats,
    pub pretrain: TrainReport<S>,
    pub finetune: TrainReport<S>,
    pub k: usize,
}

pub fn merge_config_from<S: Scalar>(cfg: &RunConfig) -> MergeConfig<S> {
    MergeConfig {
        tau_min: None,
        floor_frac: S::of(cfg.anneal_floor_frac),
        alpha: S::of(cfg.anneal_factor),
        ann_neighbors: cfg.ann_neighbors,
        split_threshold: cfg.split_threshold,
        tau_contrast: S::of(cfg.refine_tol),
        max_refine_iters: 20,
        linkage: cfg.linkage.into(),
        reinsert_rejected: false,
        ann: AnnConfig {
            seed: seeds::derive(cfg.seed, seeds::ANN_INDEX),
            ..AnnConfig::default()
        },
    }
}

/// Runs the full pipeline on one corpus.
pub fn cluster_corpus<S: Scalar>(corpus: &Corpus<S>, cfg: &RunConfig) -> Result<ClusterOutcome<S>> {
    cfg.validate()?;
    let e = corpus.embedding_matrix();
    let n = e.rows();
    let d = e.cols();
    let mode = AttentionMode::from(cfg.attention_mode);

    let params = AttentionParams::init(
        d,
        cfg.attention_dim,
        mode,
        seeds::derive(cfg.seed, seeds::ATTENTION_INIT),
    );
    let pre_opts = TrainOptions::new(cfg.epochs_pretrain, S::of(cfg.lr_pretrain));
    let (params, pretrain) = pretrain_reconstruction(&e, &params, &pre_opts)?;

    let k = adaptive_k(n, cfg.k_max);
    let dec_opts = TrainOptions::new(cfg.epochs_dec, S::of(cfg.lr_dec));
    let (params, _dec_state, finetune) = finetune_dec(
        &e,
        &params,
        k,
        &dec_opts,
        TARGET_REFRESH_PERIOD,
        seeds::derive(cfg.seed, seeds::DEC_INIT),
    )?;

    let enhanced = attention_forward(&e, &params)?;
    let ann = AnnConfig {
        seed: seeds::derive(cfg.seed, seeds::ANN_INDEX),
        ..AnnConfig::default()
    };
    let clusters = ann_kmeans(&enhanced.e_prime, k, &ann, seeds::derive(cfg.seed, seeds::KMEANS))?;

    let merge_cfg = merge_config_from::<S>(cfg);
    let (hierarchy, merge_stats) = build_hierarchy(
        &clusters,
        &enhanced,
        &merge_cfg,
        seeds::derive(cfg.seed, seeds::REFINE),
    )?;

    let ids: Vec<String> = corpus.utterances().iter().map(|u| u.id.clone()).collect();
    let prototypes = select_prototypes(&hierarchy, &enhanced.e_prime, Some(&ids))?;

    Ok(ClusterOutcome {
        params,
        enhanced,
        clusters,
        hierarchy,
        prototypes,
        merge_stats,
        pretrain,
        finetune,
        k,
    })
}

/// Routes every utterance of `corpus` through the trained model to its
/// nearest leaf, returning `(leaf id, confidence)` per utterance in corpus
/// order.
pub fn assign_corpus<S: Scalar>(
    hierarchy: &Hierarchy<S>,
    params: &AttentionParams<S>,
    corpus: &Corpus<S>,
) -> Result<Vec<(usize, S)>> {
    corpus
        .utterances()
        .iter()
        .map(|u| assign(hierarchy, params, &u.embedding))
        .collect()
}
