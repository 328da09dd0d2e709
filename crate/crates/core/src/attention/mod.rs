//! Attention-weighted embedding enhancement and its training losses.
//!
//! A two-layer scorer `softmax(W2 tanh(W1 e))` produces attention weights
//! that multiply the raw embedding elementwise. Two weighting modes:
//!
//! * `PerDim` (default): W2 is d x h, the softmax runs over the d feature
//!   dimensions of each utterance independently, and the product is rescaled
//!   by d so the expected magnitude survives the softmax.
//! * `PerUtterance`: W2 is 1 x h, one score per utterance, softmax over the
//!   whole corpus, rescaled by n. One utterance's weight then depends on the
//!   rest of the batch; a single-row forward degenerates to the identity.
//! * `Off`: weights are uniform and the embeddings pass through unchanged.
//!
//! Training happens in two phases (see [`crate::attention::train`]): decoder
//! reconstruction pre-training, then KL fine-tuning against Student-t soft
//! assignments. All gradients here are analytic and are checked against
//! central finite differences in the test suite.

mod checkpoint;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use train::{
    finetune_dec, pretrain_reconstruction, DecState, TrainOptions, TrainReport,
    TARGET_REFRESH_PERIOD,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AttentionModeCfg;
use crate::error::{Error, Result};
use crate::linalg::{dot, sq_dist, Mat};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    PerDim,
    PerUtterance,
    Off,
}

impl From<AttentionModeCfg> for AttentionMode {
    fn from(m: AttentionModeCfg) -> Self {
        match m {
            AttentionModeCfg::PerDim => AttentionMode::PerDim,
            AttentionModeCfg::PerUtterance => AttentionMode::PerUtterance,
            AttentionModeCfg::Off => AttentionMode::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub mode: AttentionMode,
    /// h x d.
    pub w1: Mat<S>,
    /// d x h for PerDim, 1 x h for PerUtterance. Present but inert for Off.
    pub w2: Mat<S>,
    /// d x d reconstruction decoder.
    pub decoder: Mat<S>,
    /// Rescale the weighted embedding by d (or n for PerUtterance) so the
    /// softmax does not shrink magnitudes.
    pub rescale: bool,
}

impl<S: Scalar> AttentionParams<S> {
    /// Small uniform init for the scorer, identity decoder. With near-zero
    /// scores the initial attention is near-uniform and the initial
    /// reconstruction loss is near zero.
    pub fn init(d: usize, h: usize, mode: AttentionMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w2_rows = match mode {
            AttentionMode::PerUtterance => 1,
            _ => d,
        };
        let mut uniform = |rows: usize, cols: usize, scale: f64| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = S::of(rng.gen_range(-scale..scale));
            }
            m
        };
        let w1 = uniform(h, d, 1.0 / (d as f64).sqrt());
        let w2 = uniform(w2_rows, h, 1.0 / (h as f64).sqrt());
        let mut decoder = Mat::zeros(d, d);
        for i in 0..d {
            decoder.set(i, i, S::one());
        }
        AttentionParams {
            mode,
            w1,
            w2,
            decoder,
            rescale: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }
}

/// Weighted embeddings plus the weights that produced them. `weights` is
/// n x d for PerDim/Off and n x 1 for PerUtterance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedEmbeddings<S> {
    pub e_prime: Mat<S>,
    pub weights: Mat<S>,
}

pub(crate) struct ForwardCache<S> {
    /// n x h tanh activations (empty for Off).
    t: Mat<S>,
    /// Attention weights, same shape as EnhancedEmbeddings::weights.
    a: Mat<S>,
    e_prime: Mat<S>,
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let mut max = S::neg_infinity();
    for v in row.iter() {
        if *v > max {
            max = *v;
        }
    }
    let mut sum = S::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub(crate) fn forward_cache<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
) -> Result<ForwardCache<S>> {
    let n = e.rows();
    let d = e.cols();
    if d != params.dim() {
        return Err(Error::InvalidInput(format!(
            "embeddings have dimension {d}, params expect {}",
            params.dim()
        )));
    }
    let h = params.hidden();

    if params.mode == AttentionMode::Off {
        let mut a = Mat::zeros(n, d);
        let inv = S::one() / S::from_usize(d).unwrap();
        for v in a.data_mut() {
            *v = inv;
        }
        return Ok(ForwardCache {
            t: Mat::zeros(0, 0),
            a,
            e_prime: e.clone(),
        });
    }

    let mut t = Mat::zeros(n, h);
    for i in 0..n {
        let ei = e.row(i);
        let ti = t.row_mut(i);
        for j in 0..h {
            ti[j] = dot(params.w1.row(j), ei).tanh();
        }
    }

    let (a, e_prime) = match params.mode {
        AttentionMode::PerDim => {
            let factor = if params.rescale {
                S::from_usize(d).unwrap()
            } else {
                S::one()
            };
            let mut a = Mat::zeros(n, d);
            let mut e_prime = Mat::zeros(n, d);
            for i in 0..n {
                let ti = t.row(i);
                let ai = a.row_mut(i);
                for jd in 0..d {
                    ai[jd] = dot(params.w2.row(jd), ti);
                }
                softmax_in_place(ai);
                let ei = e.row(i);
                let oi = e_prime.row_mut(i);
                for jd in 0..d {
                    oi[jd] = factor * ai[jd] * ei[jd];
                }
            }
            (a, e_prime)
        }
        AttentionMode::PerUtterance => {
            let factor = if params.rescale {
                S::from_usize(n).unwrap()
            } else {
                S::one()
            };
            let mut a = Mat::zeros(n, 1);
            for i in 0..n {
                a.set(i, 0, dot(params.w2.row(0), t.row(i)));
            }
            softmax_in_place(a.data_mut());
            let mut e_prime = Mat::zeros(n, d);
            for i in 0..n {
                let w = factor * a.get(i, 0);
                let ei = e.row(i);
                let oi = e_prime.row_mut(i);
                for jd in 0..d {
                    oi[jd] = w * ei[jd];
                }
            }
            (a, e_prime)
        }
        AttentionMode::Off => unreachable!(),
    };

    if !e_prime.is_finite() {
        return Err(Error::Overflow("attention forward produced non-finite values".into()));
    }
    Ok(ForwardCache { t, a, e_prime })
}

/// Applies the attention weighting to a whole corpus matrix.
pub fn attention_forward<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
) -> Result<EnhancedEmbeddings<S>> {
    let cache = forward_cache(e, params)?;
    Ok(EnhancedEmbeddings {
        e_prime: cache.e_prime,
        weights: cache.a,
    })
}

/// Enhances one embedding. PerUtterance softmaxes over a single row, which
/// makes the weight exactly 1 and the output the raw embedding; documented
/// rather than forbidden so assignment works in every mode.
pub fn enhance_single<S: Scalar>(params: &AttentionParams<S>, e: &[S]) -> Result<Vec<S>> {
    let m = Mat::from_rows(&[e.to_vec()]);
    Ok(attention_forward(&m, params)?.e_prime.row(0).to_vec())
}

#[derive(Debug, Clone)]
pub struct AttentionGrads<S> {
    pub w1: Mat<S>,
    pub w2: Mat<S>,
    pub decoder: Mat<S>,
}

impl<S: Scalar> AttentionGrads<S> {
    fn zeros_like(params: &AttentionParams<S>) -> Self {
        AttentionGrads {
            w1: Mat::zeros(params.w1.rows(), params.w1.cols()),
            w2: Mat::zeros(params.w2.rows(), params.w2.cols()),
            decoder: Mat::zeros(params.decoder.rows(), params.decoder.cols()),
        }
    }
}

/// Mean squared reconstruction error (1/n) sum_i ||D e'_i - e_i||^2.
pub fn reconstruction_loss<S: Scalar>(e: &Mat<S>, params: &AttentionParams<S>) -> Result<S> {
    let cache = forward_cache(e, params)?;
    let n = e.rows();
    let d = e.cols();
    let mut loss = S::zero();
    let mut xhat = vec![S::zero(); d];
    for i in 0..n {
        decode(&params.decoder, cache.e_prime.row(i), &mut xhat);
        loss += sq_dist(&xhat, e.row(i));
    }
    Ok(loss / S::from_usize(n).unwrap())
}

/// Loss plus analytic gradients for the reconstruction phase. Off mode trains
/// only the decoder.
pub fn reconstruction_grads<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
) -> Result<(S, AttentionGrads<S>)> {
    let cache = forward_cache(e, params)?;
    let n = e.rows();
    let d = e.cols();
    let nf = S::from_usize(n).unwrap();
    let mut grads = AttentionGrads::zeros_like(params);
    let mut loss = S::zero();

    // Decoder path first: residuals feed both the decoder gradient and the
    // enhancement backprop.
    let mut g_eprime = Mat::zeros(n, d);
    let mut xhat = vec![S::zero(); d];
    for i in 0..n {
        let ep = cache.e_prime.row(i);
        decode(&params.decoder, ep, &mut xhat);
        let ei = e.row(i);
        loss += sq_dist(&xhat, ei);
        // g_xhat = 2 (xhat - e) / n
        for r in 0..d {
            let gx = S::of(2.0) * (xhat[r] - ei[r]) / nf;
            if gx != S::zero() {
                let drow = grads.decoder.row_mut(r);
                for c in 0..d {
                    drow[c] += gx * ep[c];
                }
            }
            // g_e' += D^T g_xhat
            let dec_row = params.decoder.row(r);
            let ge = g_eprime.row_mut(i);
            for c in 0..d {
                ge[c] += dec_row[c] * gx;
            }
        }
    }
    loss = loss / nf;

    backprop_enhancement(e, &cache, params, &g_eprime, &mut grads)?;
    Ok((loss, grads))
}

/// Student-t (one degree of freedom) soft assignment of each row of
/// `e_prime` to each centroid: q_ij ~ (1 + ||e'_i - mu_j||^2)^-1, rows
/// normalized to sum 1.
pub fn dec_soft_assign<S: Scalar>(e_prime: &Mat<S>, centroids: &Mat<S>) -> Mat<S> {
    let n = e_prime.rows();
    let k = centroids.rows();
    let mut q = Mat::zeros(n, k);
    for i in 0..n {
        let row = q.row_mut(i);
        let mut sum = S::zero();
        for j in 0..k {
            let v = S::one() / (S::one() + sq_dist(e_prime.row(i), centroids.row(j)));
            row[j] = v;
            sum += v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    q
}

/// Sharpened target distribution p_ij = (q_ij^2 / f_j) / sum_l (q_il^2 / f_l)
/// with f_j the soft cluster frequency.
pub fn dec_target<S: Scalar>(q: &Mat<S>) -> Mat<S> {
    let n = q.rows();
    let k = q.cols();
    let mut freq = vec![S::zero(); k];
    for i in 0..n {
        for (f, v) in freq.iter_mut().zip(q.row(i)) {
            *f += *v;
        }
    }
    let mut p = Mat::zeros(n, k);
    for i in 0..n {
        let qi = q.row(i);
        let pi = p.row_mut(i);
        let mut sum = S::zero();
        for j in 0..k {
            let v = qi[j] * qi[j] / freq[j];
            pi[j] = v;
            sum += v;
        }
        for v in pi.iter_mut() {
            *v = *v / sum;
        }
    }
    p
}

/// KL(P || Q) = sum_ij p_ij ln(p_ij / q_ij); zero target cells contribute 0.
pub fn kl_divergence<S: Scalar>(p: &Mat<S>, q: &Mat<S>) -> S {
    debug_assert_eq!(p.rows(), q.rows());
    debug_assert_eq!(p.cols(), q.cols());
    let mut acc = S::zero();
    for (pv, qv) in p.data().iter().zip(q.data()) {
        if *pv > S::zero() {
            acc += *pv * (*pv / *qv).ln();
        }
    }
    acc
}

/// KL loss of the current parameters against a fixed target `p`.
pub fn dec_kl_loss<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
    centroids: &Mat<S>,
    p: &Mat<S>,
) -> Result<S> {
    let cache = forward_cache(e, params)?;
    let q = dec_soft_assign(&cache.e_prime, centroids);
    Ok(kl_divergence(p, &q))
}

/// KL loss plus gradients with respect to the scorer weights and the
/// centroids (the decoder does not participate in fine-tuning).
pub fn dec_kl_grads<S: Scalar>(
    e: &Mat<S>,
    params: &AttentionParams<S>,
    centroids: &Mat<S>,
    p: &Mat<S>,
) -> Result<(S, AttentionGrads<S>, Mat<S>)> {
    let cache = forward_cache(e, params)?;
    let n = e.rows();
    let d = e.cols();
    let k = centroids.rows();
    let q = dec_soft_assign(&cache.e_prime, centroids);
    let loss = kl_divergence(p, &q);

    // With the kernel s_ij = (1 + d_ij)^-1: dKL/ds_ij = (q_ij - p_ij)/s_ij
    // and ds/dd = -s^2, so dKL/dd_ij = (p_ij - q_ij) s_ij. The chain through
    // d_ij = ||e'_i - mu_j||^2 gives dKL/de'_i = 2 sum_j (p-q) s (e'_i-mu_j)
    // and the centroids the opposite sign.
    let mut g_eprime = Mat::zeros(n, d);
    let mut g_centroids = Mat::zeros(k, d);
    let two = S::of(2.0);
    for i in 0..n {
        let ep = cache.e_prime.row(i);
        for j in 0..k {
            let mu = centroids.row(j);
            let s = S::one() / (S::one() + sq_dist(ep, mu));
            let w = two * (p.get(i, j) - q.get(i, j)) * s;
            if w == S::zero() {
                continue;
            }
            let ge = g_eprime.row_mut(i);
            for c in 0..d {
                ge[c] += w * (ep[c] - mu[c]);
            }
            let gc = g_centroids.row_mut(j);
            for c in 0..d {
                gc[c] -= w * (ep[c] - mu[c]);
            }
        }
    }

    let mut grads = AttentionGrads::zeros_like(params);
    backprop_enhancement(e, &cache, params, &g_eprime, &mut grads)?;
    Ok((loss, grads, g_centroids))
}

fn decode<S: Scalar>(decoder: &Mat<S>, e_prime: &[S], out: &mut [S]) {
    for (r, o) in out.iter_mut().enumerate() {
        *o = dot(decoder.row(r), e_prime);
    }
}

/// Pushes a gradient on E' back through the weighting onto W1 and W2.
fn backprop_enhancement<S: Scalar>(
    e: &Mat<S>,
    cache: &ForwardCache<S>,
    params: &AttentionParams<S>,
    g_eprime: &Mat<S>,
    grads: &mut AttentionGrads<S>,
) -> Result<()> {
    let n = e.rows();
    let d = e.cols();
    let h = params.hidden();
    match params.mode {
        AttentionMode::Off => Ok(()),
        AttentionMode::PerDim => {
            let factor = if params.rescale {
                S::from_usize(d).unwrap()
            } else {
                S::one()
            };
            let mut g_s = vec![S::zero(); d];
            let mut g_t = vec![S::zero(); h];
            for i in 0..n {
                let ei = e.row(i);
                let ai = cache.a.row(i);
                let ti = cache.t.row(i);
                let ge = g_eprime.row(i);
                // softmax backward over the d weights
                let mut inner = S::zero();
                for jd in 0..d {
                    let ga = factor * ge[jd] * ei[jd];
                    g_s[jd] = ga; // reuse as g_a for the moment
                    inner += ai[jd] * ga;
                }
                for jd in 0..d {
                    g_s[jd] = ai[jd] * (g_s[jd] - inner);
                }
                for gt in g_t.iter_mut() {
                    *gt = S::zero();
                }
                for jd in 0..d {
                    let gs = g_s[jd];
                    if gs == S::zero() {
                        continue;
                    }
                    let w2row = params.w2.row(jd);
                    let g_w2row = grads.w2.row_mut(jd);
                    for j in 0..h {
                        g_w2row[j] += gs * ti[j];
                        g_t[j] += w2row[j] * gs;
                    }
                }
                for j in 0..h {
                    let gu = g_t[j] * (S::one() - ti[j] * ti[j]);
                    if gu == S::zero() {
                        continue;
                    }
                    let g_w1row = grads.w1.row_mut(j);
                    for c in 0..d {
                        g_w1row[c] += gu * ei[c];
                    }
                }
            }
            Ok(())
        }
        AttentionMode::PerUtterance => {
            let factor = if params.rescale {
                S::from_usize(n).unwrap()
            } else {
                S::one()
            };
            // the softmax couples every row: two passes
            let mut g_a = vec![S::zero(); n];
            let mut inner = S::zero();
            for i in 0..n {
                g_a[i] = factor * dot(g_eprime.row(i), e.row(i));
                inner += cache.a.get(i, 0) * g_a[i];
            }
            let mut g_t = vec![S::zero(); h];
            for i in 0..n {
                let gs = cache.a.get(i, 0) * (g_a[i] - inner);
                if gs == S::zero() {
                    continue;
                }
                let ti = cache.t.row(i);
                let w2row = params.w2.row(0);
                let g_w2row = grads.w2.row_mut(0);
                for j in 0..h {
                    g_w2row[j] += gs * ti[j];
                    g_t[j] = w2row[j] * gs;
                }
                let ei = e.row(i);
                for j in 0..h {
                    let gu = g_t[j] * (S::one() - ti[j] * ti[j]);
                    if gu == S::zero() {
                        continue;
                    }
                    let g_w1row = grads.w1.row_mut(j);
                    for c in 0..d {
                        g_w1row[c] += gu * ei[c];
                    }
                }
            }
            Ok(())
        }
    }
}
