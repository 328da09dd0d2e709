//! Gradient-descent loops for the two attention training phases.
//!
//! Both trainers share the same guard rails: the loss is evaluated once per
//! epoch, the best parameters seen so far are kept, and five consecutive
//! rising epochs abort the run with a warning. The returned parameters are
//! always the best ones observed, so the reported final loss never exceeds
//! the initial loss.

use log::warn;

use crate::ann::{ann_kmeans, AnnConfig};
use crate::attention::{
    dec_kl_grads, dec_kl_loss, dec_soft_assign, dec_target, kl_divergence, reconstruction_grads,
    reconstruction_loss, attention_forward, AttentionParams,
};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// How many epochs the soft-assignment targets stay frozen during
/// fine-tuning before being recomputed from the current model.
pub const TARGET_REFRESH_PERIOD: usize = 5;

const DIVERGENCE_PATIENCE: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<S> {
    pub epochs: usize,
    pub lr: S,
}

impl<S: Scalar> TrainOptions<S> {
    pub fn new(epochs: usize, lr: S) -> Self {
        TrainOptions { epochs, lr }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport<S> {
    pub initial_loss: S,
    pub final_loss: S,
    pub epochs_run: usize,
    pub diverged: bool,
}

/// Final snapshot of the fine-tuning state: centroids in enhanced space and
/// the self-consistent soft assignments at the returned parameters.
#[derive(Debug, Clone)]
pub struct DecState<S> {
    pub centroids: Mat<S>,
    pub q: Mat<S>,
    pub p: Mat<S>,
    pub kl: S,
}

/// Trains scorer and decoder to reconstruct the raw embeddings from the
/// attention-weighted ones.
pub fn pretrain_reconstruction<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
    opts: &TrainOptions<S>,
) -> Result<(AttentionParams<S>, TrainReport<S>)> {
    if opts.lr <= S::zero() {
        return Err(Error::InvalidInput("learning rate must be positive".into()));
    }
    let mut current = params.clone();
    let initial_loss = reconstruction_loss(e, &current)?;
    let mut best = current.clone();
    let mut best_loss = initial_loss;
    let mut prev_loss = initial_loss;
    let mut streak = 0usize;
    let mut diverged = false;
    let mut epochs_run = 0usize;

    for epoch in 0..opts.epochs {
        let (loss, grads) = reconstruction_grads(e, &current)?;
        if epoch > 0 {
            if loss < best_loss {
                best_loss = loss;
                best = current.clone();
            }
            if loss > prev_loss {
                streak += 1;
                if streak >= DIVERGENCE_PATIENCE {
                    warn!(
                        "reconstruction training diverged after {epoch} epochs, \
                         keeping best loss {best_loss}"
                    );
                    diverged = true;
                    break;
                }
            } else {
                streak = 0;
            }
            prev_loss = loss;
        }
        current.w1.step(&grads.w1, opts.lr);
        current.w2.step(&grads.w2, opts.lr);
        current.decoder.step(&grads.decoder, opts.lr);
        epochs_run += 1;
    }

    if !diverged && epochs_run > 0 {
        let loss = reconstruction_loss(e, &current)?;
        if loss < best_loss {
            best_loss = loss;
            best = current;
        }
    }
    Ok((
        best,
        TrainReport {
            initial_loss,
            final_loss: best_loss,
            epochs_run,
            diverged,
        },
    ))
}

/// Fine-tunes the scorer (decoder frozen) plus k cluster centroids by
/// descending KL(P || Q) against periodically refreshed sharpened targets.
/// The centroids are seeded by k-means over the enhanced embeddings.
pub fn finetune_dec<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
    k: usize,
    opts: &TrainOptions<S>,
    refresh_period: usize,
    seed: u64,
) -> Result<(AttentionParams<S>, DecState<S>, TrainReport<S>)> {
    if opts.lr <= S::zero() {
        return Err(Error::InvalidInput("learning rate must be positive".into()));
    }
    if refresh_period == 0 {
        return Err(Error::InvalidInput("target refresh period must be positive".into()));
    }
    let e_prime = attention_forward(e, params)?.e_prime;
    let flat = ann_kmeans(&e_prime, k, &AnnConfig::default(), seed)?;
    let mut centroids = flat.centroids;
    let mut current = params.clone();

    let mut p = dec_target(&dec_soft_assign(&e_prime, &centroids));
    let initial_loss = kl_divergence(&p, &dec_soft_assign(&e_prime, &centroids));

    let mut best = (current.clone(), centroids.clone());
    let mut best_loss = initial_loss;
    let mut prev_loss = initial_loss;
    let mut streak = 0usize;
    let mut diverged = false;
    let mut epochs_run = 0usize;

    for epoch in 0..opts.epochs {
        if epoch > 0 && epoch % refresh_period == 0 {
            let ep = attention_forward(e, &current)?.e_prime;
            p = dec_target(&dec_soft_assign(&ep, &centroids));
            // the objective changed; restart the divergence bookkeeping
            prev_loss = dec_kl_loss(e, &current, &centroids, &p)?;
            streak = 0;
        }
        let (loss, grads, g_centroids) = dec_kl_grads(e, &current, &centroids, &p)?;
        if loss < best_loss {
            best_loss = loss;
            best = (current.clone(), centroids.clone());
        }
        if epoch > 0 {
            if loss > prev_loss {
                streak += 1;
                if streak >= DIVERGENCE_PATIENCE {
                    warn!(
                        "fine-tuning diverged after {epoch} epochs, \
                         keeping best loss {best_loss}"
                    );
                    diverged = true;
                    break;
                }
            } else {
                streak = 0;
            }
        }
        prev_loss = loss;
        current.w1.step(&grads.w1, opts.lr);
        current.w2.step(&grads.w2, opts.lr);
        centroids.step(&g_centroids, opts.lr);
        epochs_run += 1;
    }

    if !diverged && epochs_run > 0 {
        let loss = dec_kl_loss(e, &current, &centroids, &p)?;
        if loss < best_loss {
            best_loss = loss;
            best = (current, centroids);
        }
    }

    let (best_params, best_centroids) = best;
    let ep = attention_forward(e, &best_params)?.e_prime;
    let q = dec_soft_assign(&ep, &best_centroids);
    let p = dec_target(&q);
    let kl = kl_divergence(&p, &q);
    Ok((
        best_params,
        DecState {
            centroids: best_centroids,
            q,
            p,
            kl,
        },
        TrainReport {
            initial_loss,
            final_loss: best_loss,
            epochs_run,
            diverged,
        },
    ))
}
