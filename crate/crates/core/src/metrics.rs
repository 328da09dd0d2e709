//! Clustering agreement and quality metrics.
//!
//! Partition metrics (NMI, ARI) work on integer label vectors and return f64;
//! geometry metrics (silhouette, Calinski-Harabasz, Davies-Bouldin) work on an
//! embedding matrix plus labels and return the matrix scalar. Degenerate-case
//! conventions, spelled out per function, follow the usual definitions:
//! sqrt-normalized NMI, pair-count ARI, +inf sentinels where a ratio loses
//! meaning.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist, sq_dist, Mat};
use crate::scalar::Scalar;

/// Relabels to 0..k-1 in order of first appearance; returns (labels, k).
fn canonical(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        let next = map.len();
        out.push(*map.entry(l).or_insert(next));
    }
    (out, map.len())
}

fn contingency(u: &[usize], v: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<usize>) {
    let (cu, ku) = canonical(u);
    let (cv, kv) = canonical(v);
    let mut table = vec![vec![0usize; kv]; ku];
    for (&a, &b) in cu.iter().zip(&cv) {
        table[a][b] += 1;
    }
    let row: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..kv).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    (table, row, col)
}

fn check_pair(u: &[usize], v: &[usize]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.is_empty() {
        return Err(Error::InvalidInput("label vectors are empty".into()));
    }
    Ok(())
}

/// Normalized mutual information I(U;V)/sqrt(H(U)H(V)).
///
/// Conventions: both partitions single-cluster -> 1.0 (identical trivial
/// partitions); exactly one zero-entropy side -> 0.0.
pub fn nmi(u: &[usize], v: &[usize]) -> Result<f64> {
    check_pair(u, v)?;
    let n = u.len() as f64;
    let (table, row, col) = contingency(u, v);
    let h = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let hu = h(&row);
    let hv = h(&col);
    if hu == 0.0 && hv == 0.0 {
        return Ok(1.0);
    }
    if hu == 0.0 || hv == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * ((n * c as f64) / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (hu * hv).sqrt()).clamp(0.0, 1.0))
}

/// Adjusted Rand index via pair counts. When the denominator vanishes (both
/// partitions all-singletons or both single-cluster) the partitions are
/// trivially identical in structure and the index is 1.0.
pub fn ari(u: &[usize], v: &[usize]) -> Result<f64> {
    check_pair(u, v)?;
    let n = u.len() as f64;
    let (table, row, col) = contingency(u, v);
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| c2(c as f64))
        .sum();
    let sum_a: f64 = row.iter().map(|&c| c2(c as f64)).sum();
    let sum_b: f64 = col.iter().map(|&c| c2(c as f64)).sum();
    let expected = sum_a * sum_b / c2(n);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn check_geometry<S: Scalar>(points: &Mat<S>, labels: &[usize]) -> Result<usize> {
    if points.rows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} points but {} labels",
            points.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no points".into()));
    }
    let (_, k) = canonical(labels);
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "geometry metrics need at least 2 clusters, got {k}"
        )));
    }
    Ok(k)
}

/// Mean silhouette over all points, O(n^2 d).
///
/// Conventions: a singleton's silhouette is 0; a point with a(i) = b(i) = 0
/// (exact duplicates across clusters) contributes 0.
pub fn silhouette<S: Scalar>(points: &Mat<S>, labels: &[usize]) -> Result<S> {
    let k = check_geometry(points, labels)?;
    let (labels, _) = canonical(labels);
    let n = points.rows();
    let sizes = cluster_sizes(&labels, k);
    let mut total = S::zero();
    let mut dist_to_cluster = vec![S::zero(); k];
    for i in 0..n {
        for v in dist_to_cluster.iter_mut() {
            *v = S::zero();
        }
        for j in 0..n {
            if j != i {
                dist_to_cluster[labels[j]] += dist(points.row(i), points.row(j));
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue; // singleton: s = 0
        }
        let a = dist_to_cluster[own] / S::from_usize(sizes[own] - 1).unwrap();
        let mut b = S::infinity();
        for (c, &sz) in sizes.iter().enumerate() {
            if c != own && sz > 0 {
                let mean = dist_to_cluster[c] / S::from_usize(sz).unwrap();
                if mean < b {
                    b = mean;
                }
            }
        }
        let denom = a.max(b);
        if denom > S::zero() {
            total += (b - a) / denom;
        }
    }
    Ok(total / S::from_usize(n).unwrap())
}

/// Silhouette on a seeded subsample of at most `cap` points; exact when
/// n <= cap. Keeps the pipeline's per-size cost bounded while the exact
/// operation above stays available for oracle-grade evaluation.
pub fn silhouette_sampled<S: Scalar>(
    points: &Mat<S>,
    labels: &[usize],
    cap: usize,
    seed: u64,
) -> Result<S> {
    if points.rows() <= cap {
        return silhouette(points, labels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..points.rows()).collect();
    for i in 0..cap {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    let mut chosen = idx[..cap].to_vec();
    chosen.sort_unstable();
    let mut sub = Mat::zeros(cap, points.cols());
    let mut sub_labels = Vec::with_capacity(cap);
    for (r, &i) in chosen.iter().enumerate() {
        sub.row_mut(r).copy_from_slice(points.row(i));
        sub_labels.push(labels[i]);
    }
    let (_, k) = canonical(&sub_labels);
    if k < 2 {
        log::warn!("silhouette subsample collapsed to one cluster; reporting 0");
        return Ok(S::zero());
    }
    silhouette(&sub, &sub_labels)
}

/// Calinski-Harabasz: (B/(k-1)) / (W/(n-k)). W = 0 (every cluster a point
/// mass) returns +inf.
pub fn calinski_harabasz<S: Scalar>(points: &Mat<S>, labels: &[usize]) -> Result<S> {
    let k = check_geometry(points, labels)?;
    let (labels, _) = canonical(labels);
    let n = points.rows();
    if n <= k {
        return Err(Error::InvalidInput(format!(
            "calinski-harabasz needs n > k, got n={n} k={k}"
        )));
    }
    let centroids = cluster_centroids(points, &labels, k);
    let sizes = cluster_sizes(&labels, k);
    let global = points.row_mean();
    let mut between = S::zero();
    for (c, sz) in centroids.iter_rows().zip(&sizes) {
        between += S::from_usize(*sz).unwrap() * sq_dist(c, &global);
    }
    let mut within = S::zero();
    for i in 0..n {
        within += sq_dist(points.row(i), centroids.row(labels[i]));
    }
    if within == S::zero() {
        return Ok(S::infinity());
    }
    let kf = S::from_usize(k).unwrap();
    let nf = S::from_usize(n).unwrap();
    Ok((between / (kf - S::one())) / (within / (nf - kf)))
}

/// Davies-Bouldin: mean over clusters of the worst (s_i + s_j) / d_ij.
/// Coincident centroids make d_ij = 0; the index is then +inf (logged).
pub fn davies_bouldin<S: Scalar>(points: &Mat<S>, labels: &[usize]) -> Result<S> {
    let k = check_geometry(points, labels)?;
    let (labels, _) = canonical(labels);
    let centroids = cluster_centroids(points, &labels, k);
    let sizes = cluster_sizes(&labels, k);
    let mut scatter = vec![S::zero(); k];
    for i in 0..points.rows() {
        scatter[labels[i]] += dist(points.row(i), centroids.row(labels[i]));
    }
    for (s, &sz) in scatter.iter_mut().zip(&sizes) {
        *s = *s / S::from_usize(sz.max(1)).unwrap();
    }
    let mut acc = S::zero();
    for i in 0..k {
        let mut worst = S::zero();
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist(centroids.row(i), centroids.row(j));
            if d == S::zero() {
                log::warn!("davies-bouldin: clusters {i} and {j} share a centroid");
                return Ok(S::infinity());
            }
            let r = (scatter[i] + scatter[j]) / d;
            if r > worst {
                worst = r;
            }
        }
        acc += worst;
    }
    Ok(acc / S::from_usize(k).unwrap())
}

/// Greedy minimum-distance matching between two centroid sets: sort all pairs
/// by (distance, left index, right index) ascending, take a pair when both
/// sides are still free, stop after min(k1, k2) pairs.
pub fn greedy_match<S: Scalar>(a: &Mat<S>, b: &Mat<S>) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(S, usize, usize)> = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            pairs.push((dist(a.row(i), b.row(j)), i, j));
        }
    }
    pairs.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let want = a.rows().min(b.rows());
    let mut used_a = vec![false; a.rows()];
    let mut used_b = vec![false; b.rows()];
    let mut out = Vec::with_capacity(want);
    for (_, i, j) in pairs {
        if out.len() == want {
            break;
        }
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Mean distance between greedily matched centroid pairs, divided by `scale`.
/// Surplus centroids on the larger side are excluded from the mean.
pub fn centroid_movement<S: Scalar>(prev: &Mat<S>, curr: &Mat<S>, scale: S) -> Result<S> {
    if prev.rows() == 0 || curr.rows() == 0 {
        return Err(Error::InvalidInput("empty centroid set".into()));
    }
    if prev.cols() != curr.cols() {
        return Err(Error::InvalidInput(format!(
            "centroid dimensions differ: {} vs {}",
            prev.cols(),
            curr.cols()
        )));
    }
    if !(scale > S::zero()) {
        return Err(Error::InvalidInput("movement scale must be > 0".into()));
    }
    let matched = greedy_match(prev, curr);
    let mut acc = S::zero();
    for &(i, j) in &matched {
        acc += dist(prev.row(i), curr.row(j));
    }
    Ok(acc / S::from_usize(matched.len()).unwrap() / scale)
}

/// Fraction of assignments whose confidence falls below `delta`.
pub fn low_confidence_rate<S: Scalar>(assignments: &[(usize, S)], delta: S) -> Result<S> {
    if assignments.is_empty() {
        return Err(Error::InvalidInput("no assignments".into()));
    }
    let low = assignments.iter().filter(|(_, c)| *c < delta).count();
    Ok(S::from_usize(low).unwrap() / S::from_usize(assignments.len()).unwrap())
}

/// Mean Jaccard overlap of prototype id sets across matched leaves.
/// `matching` pairs prev-leaf ids with curr-leaf ids (see [`greedy_match`]
/// over leaf centroids); pairs absent from either map are skipped.
pub fn prototype_consistency(
    prev: &BTreeMap<usize, Vec<String>>,
    curr: &BTreeMap<usize, Vec<String>>,
    matching: &[(usize, usize)],
) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for &(p, c) in matching {
        let (Some(a), Some(b)) = (prev.get(&p), curr.get(&c)) else {
            continue;
        };
        let sa: std::collections::BTreeSet<&str> = a.iter().map(String::as_str).collect();
        let sb: std::collections::BTreeSet<&str> = b.iter().map(String::as_str).collect();
        let inter = sa.intersection(&sb).count();
        let union = sa.union(&sb).count();
        acc += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("no matched leaves".into()));
    }
    Ok(acc / count as f64)
}

fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn cluster_centroids<S: Scalar>(points: &Mat<S>, labels: &[usize], k: usize) -> Mat<S> {
    let mut centroids = Mat::zeros(k, points.cols());
    let sizes = cluster_sizes(labels, k);
    for i in 0..points.rows() {
        let c = labels[i];
        let row = points.row(i);
        let cr = centroids.row_mut(c);
        for (m, v) in cr.iter_mut().zip(row) {
            *m += *v;
        }
    }
    for c in 0..k {
        let inv = S::one() / S::from_usize(sizes[c].max(1)).unwrap();
        for v in centroids.row_mut(c) {
            *v *= inv;
        }
    }
    centroids
}
