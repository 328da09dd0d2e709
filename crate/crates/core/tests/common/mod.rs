//! Independent reference implementations shared by the integration tests.
//! Everything here is written from first principles on plain f64 slices so
//! a library bug cannot hide inside its own oracle.
#![allow(dead_code)]

use std::collections::BTreeMap;

use hic_core::linalg::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let mut m = Mat::zeros(n, d);
    for v in m.data_mut() {
        *v = rng.gen_range(-3.0..3.0);
    }
    m
}

/// Random labels guaranteed to use at least two distinct values when n >= 2.
pub fn random_labels(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    loop {
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        if n < 2 || labels.iter().any(|&l| l != labels[0]) {
            return labels;
        }
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let next = map.len();
        out.push(*map.entry(l).or_insert(next));
    }
    (out, map.len())
}

pub fn brute_nmi(u: &[usize], v: &[usize]) -> f64 {
    assert_eq!(u.len(), v.len());
    let n = u.len() as f64;
    let (u, ku) = compact(u);
    let (v, kv) = compact(v);
    let mut joint = vec![vec![0usize; kv]; ku];
    for (&a, &b) in u.iter().zip(&v) {
        joint[a][b] += 1;
    }
    let row: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..kv).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (hu, hv) = (entropy(&row), entropy(&col));
    if hu == 0.0 && hv == 0.0 {
        return 1.0;
    }
    if hu == 0.0 || hv == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (i, r) in joint.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let pij = c as f64 / n;
                mi += pij * (n * c as f64 / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    (mi / (hu * hv).sqrt()).clamp(0.0, 1.0)
}

/// ARI by literally scanning all point pairs, no contingency shortcut.
pub fn brute_ari(u: &[usize], v: &[usize]) -> f64 {
    assert_eq!(u.len(), v.len());
    let n = u.len();
    let mut same_both = 0.0f64;
    let mut same_u = 0.0f64;
    let mut same_v = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = u[i] == u[j];
            let b = v[i] == v[j];
            if a {
                same_u += 1.0;
            }
            if b {
                same_v += 1.0;
            }
            if a && b {
                same_both += 1.0;
            }
        }
    }
    let total = (n * (n - 1)) as f64 / 2.0;
    let expected = same_u * same_v / total;
    let max = 0.5 * (same_u + same_v);
    if (max - expected).abs() == 0.0 {
        return 1.0;
    }
    (same_both - expected) / (max - expected)
}

pub fn brute_silhouette(points: &Mat<f64>, labels: &[usize]) -> f64 {
    let (labels, k) = compact(labels);
    let n = points.rows();
    let mut sizes = vec![0usize; k];
    for &l in &labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut sums = vec![0.0f64; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += euclid(points.row(i), points.row(j));
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

fn centroids_of(points: &Mat<f64>, labels: &[usize], k: usize) -> (Mat<f64>, Vec<usize>) {
    let mut sums = Mat::zeros(k, points.cols());
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for (s, x) in sums.row_mut(l).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for (c, &sz) in (0..k).zip(&sizes) {
        for s in sums.row_mut(c) {
            *s /= sz.max(1) as f64;
        }
    }
    (sums, sizes)
}

pub fn brute_ch(points: &Mat<f64>, labels: &[usize]) -> f64 {
    let (labels, k) = compact(labels);
    let n = points.rows();
    let (cents, sizes) = centroids_of(points, &labels, k);
    let global = points.row_mean();
    let mut between = 0.0;
    for c in 0..k {
        let d = euclid(cents.row(c), &global);
        between += sizes[c] as f64 * d * d;
    }
    let mut within = 0.0;
    for i in 0..n {
        let d = euclid(points.row(i), cents.row(labels[i]));
        within += d * d;
    }
    if within == 0.0 {
        return f64::INFINITY;
    }
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

pub fn brute_db(points: &Mat<f64>, labels: &[usize]) -> f64 {
    let (labels, k) = compact(labels);
    let (cents, sizes) = centroids_of(points, &labels, k);
    let mut scatter = vec![0.0f64; k];
    for (i, &l) in labels.iter().enumerate() {
        scatter[l] += euclid(points.row(i), cents.row(l));
    }
    for (s, &sz) in scatter.iter_mut().zip(&sizes) {
        *s /= sz.max(1) as f64;
    }
    let mut acc = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = euclid(cents.row(i), cents.row(j));
            if d == 0.0 {
                return f64::INFINITY;
            }
            worst = worst.max((scatter[i] + scatter[j]) / d);
        }
        acc += worst;
    }
    acc / k as f64
}

/// Exhaustive nearest neighbors: indices of the k closest points to q,
/// squared distance then index as the tie order.
pub fn brute_knn(points: &Mat<f64>, q: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..points.rows())
        .map(|i| {
            let d = euclid(points.row(i), q);
            (d * d, i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Plain Lloyd iterations from the given start, squared-distance argmin with
/// index tie-break, empty clusters keep their previous centroid.
pub fn exact_lloyd(
    points: &Mat<f64>,
    start: &Mat<f64>,
    max_iters: usize,
) -> (Vec<usize>, Mat<f64>) {
    let k = start.rows();
    let mut cents = start.clone();
    let mut labels = vec![0usize; points.rows()];
    for _ in 0..max_iters {
        let mut changed = false;
        for i in 0..points.rows() {
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let d = euclid(points.row(i), cents.row(c));
                if (d * d, c) < best {
                    best = (d * d, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        let (next, sizes) = centroids_of(points, &labels, k);
        for c in 0..k {
            if sizes[c] > 0 {
                cents.row_mut(c).copy_from_slice(next.row(c));
            }
        }
        if !changed {
            break;
        }
    }
    (labels, cents)
}

pub fn lloyd_wcss(points: &Mat<f64>, labels: &[usize], cents: &Mat<f64>) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let d = euclid(points.row(i), cents.row(l));
            d * d
        })
        .sum()
}

/// Mean matched distance under the globally optimal assignment, found by
/// trying every permutation. Only usable for small k.
pub fn optimal_match_mean_dist(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    assert_eq!(a.rows(), b.rows());
    let k = a.rows();
    assert!(k <= 8, "exhaustive matching is factorial in k");
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = (0..k).map(|i| euclid(a.row(i), b.row(p[i]))).sum();
        best = best.min(total);
    });
    best / k as f64
}

fn permute<F: FnMut(&[usize])>(items: &mut Vec<usize>, at: usize, visit: &mut F) {
    if at == items.len() {
        visit(items);
        return;
    }
    for i in at..items.len() {
        items.swap(at, i);
        permute(items, at + 1, visit);
        items.swap(at, i);
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}
