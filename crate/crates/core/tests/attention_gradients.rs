//! Analytic gradients checked against central finite differences, for both
//! training losses, every parameter block, and every scoring mode.

mod common;

use common::relative_error;
use hic_core::attention::{
    dec_kl_grads, dec_kl_loss, dec_soft_assign, dec_target, reconstruction_grads,
    reconstruction_loss, AttentionMode, AttentionParams,
};
use hic_core::linalg::Mat;
use rand::Rng;

const FD_EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const COORDS_PER_BLOCK: usize = 20;

fn random_inputs(n: usize, d: usize, seed: u64) -> Mat<f64> {
    let mut r = common::rng(seed);
    let mut e = Mat::zeros(n, d);
    for v in e.data_mut() {
        *v = r.gen_range(-1.5..1.5);
    }
    e
}

fn perturbed_params(d: usize, h: usize, mode: AttentionMode, seed: u64) -> AttentionParams<f64> {
    let mut params = AttentionParams::init(d, h, mode, seed);
    // move the decoder off the identity so its gradient is exercised
    let mut r = common::rng(seed ^ 0xdead);
    for v in params.decoder.data_mut() {
        *v += r.gen_range(-0.2..0.2);
    }
    params
}

/// For `count` random coordinates of the matrix selected by `pick`, compare
/// the analytic entry against a central difference of `loss`.
fn check_block(
    params: &AttentionParams<f64>,
    analytic: &Mat<f64>,
    pick: impl Fn(&mut AttentionParams<f64>) -> &mut Mat<f64>,
    loss: impl Fn(&AttentionParams<f64>) -> f64,
    count: usize,
    seed: u64,
    what: &str,
) {
    let mut r = common::rng(seed);
    let rows = analytic.rows();
    let cols = analytic.cols();
    for _ in 0..count {
        let i = r.gen_range(0..rows);
        let j = r.gen_range(0..cols);
        let mut plus = params.clone();
        let base = pick(&mut plus).get(i, j);
        pick(&mut plus).set(i, j, base + FD_EPS);
        let up = loss(&plus);
        let mut minus = params.clone();
        pick(&mut minus).set(i, j, base - FD_EPS);
        let down = loss(&minus);
        let numeric = (up - down) / (2.0 * FD_EPS);
        let err = relative_error(analytic.get(i, j), numeric);
        assert!(
            err < TOL,
            "{what}[{i},{j}]: analytic {} vs numeric {numeric}, rel err {err}",
            analytic.get(i, j)
        );
    }
}

#[test]
fn reconstruction_gradients_match_finite_differences() {
    for (seed, mode) in [
        (3u64, AttentionMode::PerDim),
        (4, AttentionMode::PerDim),
        (5, AttentionMode::PerUtterance),
        (6, AttentionMode::PerUtterance),
        (7, AttentionMode::Off),
    ] {
        let (n, d, h) = (6, 5, 3);
        let e = random_inputs(n, d, seed);
        let params = perturbed_params(d, h, mode, seed);
        let (loss, grads) = reconstruction_grads(&e, &params).unwrap();
        assert!((loss - reconstruction_loss(&e, &params).unwrap()).abs() < 1e-12);
        let eval = |p: &AttentionParams<f64>| reconstruction_loss(&e, p).unwrap();
        check_block(&params, &grads.w1, |p| &mut p.w1, eval, COORDS_PER_BLOCK, seed * 31, "w1");
        check_block(&params, &grads.w2, |p| &mut p.w2, eval, COORDS_PER_BLOCK, seed * 37, "w2");
        check_block(
            &params,
            &grads.decoder,
            |p| &mut p.decoder,
            eval,
            COORDS_PER_BLOCK,
            seed * 41,
            "decoder",
        );
    }
}

#[test]
fn kl_gradients_match_finite_differences() {
    for (seed, mode) in [
        (11u64, AttentionMode::PerDim),
        (12, AttentionMode::PerUtterance),
        (13, AttentionMode::Off),
    ] {
        let (n, d, h, k) = (7, 4, 3, 3);
        let e = random_inputs(n, d, seed);
        let params = perturbed_params(d, h, mode, seed);
        let mut centroids = random_inputs(k, d, seed ^ 0xbeef);
        for v in centroids.data_mut() {
            *v *= 0.8;
        }
        // freeze the target at the current soft assignment, as training does
        let enhanced = hic_core::attention::attention_forward(&e, &params).unwrap();
        let q = dec_soft_assign(&enhanced.e_prime, &centroids);
        let p = dec_target(&q);

        let (loss, grads, g_centroids) = dec_kl_grads(&e, &params, &centroids, &p).unwrap();
        assert!((loss - dec_kl_loss(&e, &params, &centroids, &p).unwrap()).abs() < 1e-12);

        let eval = |pr: &AttentionParams<f64>| dec_kl_loss(&e, pr, &centroids, &p).unwrap();
        if mode != AttentionMode::Off {
            check_block(&params, &grads.w1, |p| &mut p.w1, eval, COORDS_PER_BLOCK, seed * 31, "w1");
            check_block(&params, &grads.w2, |p| &mut p.w2, eval, COORDS_PER_BLOCK, seed * 37, "w2");
        }

        // centroid coordinates, every entry
        for i in 0..k {
            for j in 0..d {
                let mut plus = centroids.clone();
                plus.set(i, j, plus.get(i, j) + FD_EPS);
                let up = dec_kl_loss(&e, &params, &plus, &p).unwrap();
                let mut minus = centroids.clone();
                minus.set(i, j, minus.get(i, j) - FD_EPS);
                let down = dec_kl_loss(&e, &params, &minus, &p).unwrap();
                let numeric = (up - down) / (2.0 * FD_EPS);
                let err = relative_error(g_centroids.get(i, j), numeric);
                assert!(
                    err < TOL,
                    "centroid[{i},{j}]: analytic {} vs numeric {numeric}, rel err {err}",
                    g_centroids.get(i, j)
                );
            }
        }
    }
}

#[test]
fn decoder_gradient_is_zero_in_kl_phase() {
    let (n, d, h, k) = (5, 4, 2, 2);
    let e = random_inputs(n, d, 21);
    let params = perturbed_params(d, h, AttentionMode::PerDim, 21);
    let centroids = random_inputs(k, d, 22);
    let enhanced = hic_core::attention::attention_forward(&e, &params).unwrap();
    let p = dec_target(&dec_soft_assign(&enhanced.e_prime, &centroids));
    let (_, grads, _) = dec_kl_grads(&e, &params, &centroids, &p).unwrap();
    assert!(grads.decoder.data().iter().all(|&g| g == 0.0));
}
