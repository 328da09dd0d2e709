//! Approximate nearest-neighbor search and the ANN-assisted k-means used for
//! initial flat clustering.
//!
//! Small point sets (at most `exact_threshold`) get a brute-force table with
//! deterministic `(distance, index)` ordering, so results are exact. Larger
//! sets get a layered, degree-bounded navigable proximity graph: each point
//! draws a geometric level, upper layers are sparse express lanes searched
//! greedily, and the bottom layer is searched best-first with a bounded
//! candidate breadth. All distances are squared Euclidean; ordering is the
//! same as for true Euclidean and the square root is never needed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sq_dist, Mat};
use crate::scalar::Scalar;

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnConfig {
    /// Neighbor cap per node on upper graph layers (doubled on layer 0).
    pub max_degree: usize,
    /// Search breadth while wiring a new point into the graph.
    pub ef_construction: usize,
    /// Search breadth for queries; raised to the requested k when smaller.
    pub ef_search: usize,
    /// Point counts up to this use the exact table instead of the graph.
    pub exact_threshold: usize,
    /// Seed for the level draws; graph shape is deterministic given it.
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            max_degree: 16,
            ef_construction: 100,
            ef_search: 64,
            exact_threshold: 2048,
            seed: 0,
        }
    }
}

/// `max(1, min(floor(sqrt(n)), k_max))`: the cluster count grows with the
/// square root of the corpus until it saturates at the configured cap.
pub fn adaptive_k(n: usize, k_max: usize) -> usize {
    let root = (n as f64).sqrt().floor() as usize;
    root.min(k_max).max(1)
}

/// Heap entry ordered by (distance, index) so ties are deterministic.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    idx: u32,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // distances are finite by construction (validated corpus input)
        self.dist
            .partial_cmp(&other.dist)
            .unwrap()
            .then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug)]
struct GraphIndex {
    /// layers[l] is a full-size adjacency table; nodes absent from layer l
    /// have an empty neighbor list there.
    layers: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

#[derive(Debug)]
enum IndexKind {
    Exact,
    Graph(GraphIndex),
}

#[derive(Debug)]
pub struct AnnIndex<S> {
    points: Mat<S>,
    kind: IndexKind,
    ef_search: usize,
}

impl<S: Scalar> AnnIndex<S> {
    pub fn build(points: &Mat<S>, cfg: &AnnConfig) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::InvalidInput("cannot index zero points".into()));
        }
        if cfg.max_degree == 0 || cfg.ef_construction == 0 || cfg.ef_search == 0 {
            return Err(Error::InvalidInput("index parameters must be positive".into()));
        }
        let m = points.rows();
        if m <= cfg.exact_threshold {
            return Ok(AnnIndex {
                points: points.clone(),
                kind: IndexKind::Exact,
                ef_search: cfg.ef_search,
            });
        }
        Ok(AnnIndex {
            points: points.clone(),
            kind: IndexKind::Graph(build_graph(points, cfg)),
            ef_search: cfg.ef_search,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, IndexKind::Exact)
    }

    /// Up to `k` distinct point indices ordered by non-decreasing squared
    /// distance to `query`, ties by index. Exact for small indexes.
    pub fn query(&self, query: &[S], k: usize) -> Vec<(usize, S)> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        match &self.kind {
            IndexKind::Exact => {
                let mut all: Vec<HeapItem> = (0..self.len())
                    .map(|i| HeapItem {
                        dist: sq_dist(self.points.row(i), query).as_f64(),
                        idx: i as u32,
                    })
                    .collect();
                all.sort_unstable();
                all.truncate(k);
                all.into_iter()
                    .map(|it| (it.idx as usize, S::of(it.dist)))
                    .collect()
            }
            IndexKind::Graph(g) => {
                let ef = self.ef_search.max(k);
                let mut entry = g.entry;
                for layer in (1..=g.max_level).rev() {
                    entry = greedy_descend(&self.points, g, query, entry, layer);
                }
                let mut found = search_layer(&self.points, g, query, entry, ef, 0);
                found.truncate(k);
                found
                    .into_iter()
                    .map(|it| (it.idx as usize, S::of(it.dist)))
                    .collect()
            }
        }
    }
}

fn greedy_descend<S: Scalar>(
    points: &Mat<S>,
    g: &GraphIndex,
    query: &[S],
    entry: u32,
    layer: usize,
) -> u32 {
    let mut cur = HeapItem {
        dist: sq_dist(points.row(entry as usize), query).as_f64(),
        idx: entry,
    };
    loop {
        let mut improved = false;
        for &nb in &g.layers[layer][cur.idx as usize] {
            let cand = HeapItem {
                dist: sq_dist(points.row(nb as usize), query).as_f64(),
                idx: nb,
            };
            if cand < cur {
                cur = cand;
                improved = true;
            }
        }
        if !improved {
            return cur.idx;
        }
    }
}

/// Best-first search of one layer; returns up to `ef` items sorted ascending.
fn search_layer<S: Scalar>(
    points: &Mat<S>,
    g: &GraphIndex,
    query: &[S],
    entry: u32,
    ef: usize,
    layer: usize,
) -> Vec<HeapItem> {
    let mut visited = vec![false; points.rows()];
    visited[entry as usize] = true;
    let start = HeapItem {
        dist: sq_dist(points.row(entry as usize), query).as_f64(),
        idx: entry,
    };
    // candidates: nearest first; results: farthest first so the worst is
    // cheap to evict
    let mut candidates = BinaryHeap::new();
    candidates.push(std::cmp::Reverse(start));
    let mut results: BinaryHeap<HeapItem> = BinaryHeap::new();
    results.push(start);

    while let Some(std::cmp::Reverse(cand)) = candidates.pop() {
        let worst = results.peek().copied().unwrap();
        if results.len() >= ef && cand.dist > worst.dist {
            break;
        }
        for &nb in &g.layers[layer][cand.idx as usize] {
            if visited[nb as usize] {
                continue;
            }
            visited[nb as usize] = true;
            let item = HeapItem {
                dist: sq_dist(points.row(nb as usize), query).as_f64(),
                idx: nb,
            };
            let worst = results.peek().copied().unwrap();
            if results.len() < ef || item < worst {
                candidates.push(std::cmp::Reverse(item));
                results.push(item);
                if results.len() > ef {
                    results.pop();
                }
            }
        }
    }
    let mut out = results.into_vec();
    out.sort_unstable();
    out
}

fn build_graph<S: Scalar>(points: &Mat<S>, cfg: &AnnConfig) -> GraphIndex {
    let m = points.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let level_mult = 1.0 / (cfg.max_degree as f64).ln();
    let levels: Vec<usize> = (0..m)
        .map(|_| {
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps ln finite
            ((-u.ln() * level_mult).floor() as usize).min(24)
        })
        .collect();
    let top = *levels.iter().max().unwrap();
    let mut g = GraphIndex {
        layers: (0..=top).map(|_| vec![Vec::new(); m]).collect(),
        entry: 0,
        max_level: levels[0],
    };

    for i in 1..m {
        let node_level = levels[i];
        let q = points.row(i);
        let mut entry = g.entry;
        for layer in ((node_level + 1)..=g.max_level).rev() {
            entry = greedy_descend(points, &g, q, entry, layer);
        }
        for layer in (0..=node_level.min(g.max_level)).rev() {
            let found = search_layer(points, &g, q, entry, cfg.ef_construction, layer);
            entry = found[0].idx;
            let cap = if layer == 0 { cfg.max_degree * 2 } else { cfg.max_degree };
            let chosen: Vec<u32> = found.iter().take(cfg.max_degree).map(|it| it.idx).collect();
            for &nb in &chosen {
                g.layers[layer][i].push(nb);
                g.layers[layer][nb as usize].push(i as u32);
                prune_neighbors(points, &mut g.layers[layer][nb as usize], nb, cap);
            }
        }
        if node_level > g.max_level {
            g.max_level = node_level;
            g.entry = i as u32;
        }
    }
    g
}

/// Keeps the `cap` nearest neighbors of `owner`, ties by index.
fn prune_neighbors<S: Scalar>(points: &Mat<S>, list: &mut Vec<u32>, owner: u32, cap: usize) {
    if list.len() <= cap {
        return;
    }
    let base = points.row(owner as usize);
    let mut scored: Vec<HeapItem> = list
        .iter()
        .map(|&nb| HeapItem {
            dist: sq_dist(points.row(nb as usize), base).as_f64(),
            idx: nb,
        })
        .collect();
    scored.sort_unstable();
    scored.dedup_by_key(|it| it.idx);
    scored.truncate(cap);
    list.clear();
    list.extend(scored.into_iter().map(|it| it.idx));
}

/// Flat clustering result. Every cluster is non-empty and every centroid is
/// the exact mean of its members.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet<S> {
    pub assignments: Vec<usize>,
    pub centroids: Mat<S>,
    pub k: usize,
    pub iterations: usize,
}

impl<S: Scalar> ClusterSet<S> {
    /// Within-cluster sum of squared distances to the assigned centroid.
    pub fn wcss(&self, points: &Mat<S>) -> S {
        let mut acc = S::zero();
        for (i, &c) in self.assignments.iter().enumerate() {
            acc += sq_dist(points.row(i), self.centroids.row(c));
        }
        acc
    }

    /// Checks the structural invariants against the clustered points.
    pub fn validate(&self, points: &Mat<S>) -> Result<()> {
        if self.assignments.len() != points.rows() {
            return Err(Error::Internal("assignment count differs from points".into()));
        }
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assignments {
            if c >= self.k {
                return Err(Error::Internal(format!("assignment {c} out of range")));
            }
            sizes[c] += 1;
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::Internal("empty cluster".into()));
        }
        let d = points.cols();
        for j in 0..self.k {
            let mut mean = vec![S::zero(); d];
            for (i, &c) in self.assignments.iter().enumerate() {
                if c == j {
                    for (m, v) in mean.iter_mut().zip(points.row(i)) {
                        *m += *v;
                    }
                }
            }
            let inv = S::one() / S::from_usize(sizes[j]).unwrap();
            for m in mean.iter_mut() {
                *m *= inv;
            }
            let drift = sq_dist(&mean, self.centroids.row(j)).as_f64().sqrt();
            if drift > 1e-6 {
                return Err(Error::Internal(format!(
                    "centroid {j} is {drift:.3e} away from its member mean"
                )));
            }
        }
        Ok(())
    }
}

/// Seeded k-means++ center choice over squared-distance mass.
fn kmeans_pp_init<S: Scalar>(points: &Mat<S>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)).as_f64())
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // floating-point underrun at the tail: take the last positive
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // all remaining mass is zero (duplicate points): first untaken
            taken.iter().position(|&t| !t).unwrap()
        };
        chosen.push(next);
        taken[next] = true;
        for (i, w) in d2.iter_mut().enumerate() {
            let cand = sq_dist(points.row(i), points.row(next)).as_f64();
            if cand < *w {
                *w = cand;
            }
        }
    }
    chosen
}

/// Lloyd iterations whose assignment step queries an index built over the
/// current centroids. Small k keeps that index in its exact regime, so the
/// usual monotonic convergence applies; stops on centroid displacement below
/// `tol` or after `max_iters`, then runs one exact reassign/update pass so
/// centroids are exact member means.
pub fn ann_kmeans<S: Scalar>(
    points: &Mat<S>,
    k: usize,
    cfg: &AnnConfig,
    seed: u64,
) -> Result<ClusterSet<S>> {
    ann_kmeans_with(points, k, cfg, seed, KMEANS_MAX_ITERS, KMEANS_TOL)
}

pub fn ann_kmeans_with<S: Scalar>(
    points: &Mat<S>,
    k: usize,
    cfg: &AnnConfig,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterSet<S>> {
    let n = points.rows();
    let d = points.cols();
    if k == 0 {
        return Err(Error::InvalidInput("cluster count must be positive".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(points, k, &mut rng);
    let mut centroids = Mat::zeros(k, d);
    for (j, &p) in init.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(points.row(p));
    }

    let mut assignments = vec![0usize; n];
    let mut iterations = 0usize;
    for _ in 0..max_iters {
        iterations += 1;
        assign_step(points, &centroids, cfg, &mut assignments)?;
        let (new_centroids, sizes) = update_step(points, &assignments, k);
        let mut next = new_centroids;
        reseed_empty(points, &centroids, &assignments, &sizes, &mut next);
        let mut shift: f64 = 0.0;
        for j in 0..k {
            shift = shift.max(sq_dist(centroids.row(j), next.row(j)).as_f64().sqrt());
        }
        centroids = next;
        if shift < tol {
            break;
        }
    }

    // final exact pass pins the centroid-is-member-mean invariant
    assign_step(points, &centroids, cfg, &mut assignments)?;
    let (mut final_centroids, mut sizes) = update_step(points, &assignments, k);
    while sizes.iter().any(|&s| s == 0) {
        let j = sizes.iter().position(|&s| s == 0).unwrap();
        // farthest point from its centroid moves over, ties to smallest index
        let mut far = HeapItem { dist: -1.0, idx: 0 };
        for (i, &c) in assignments.iter().enumerate() {
            if sizes[c] <= 1 {
                continue; // do not empty another cluster
            }
            let dist = sq_dist(points.row(i), final_centroids.row(c)).as_f64();
            if dist > far.dist {
                far = HeapItem { dist, idx: i as u32 };
            }
        }
        let i = far.idx as usize;
        sizes[assignments[i]] -= 1;
        assignments[i] = j;
        sizes[j] += 1;
        let (c, s) = update_step(points, &assignments, k);
        final_centroids = c;
        sizes = s;
    }

    let out = ClusterSet {
        assignments,
        centroids: final_centroids,
        k,
        iterations,
    };
    debug_assert!(out.validate(points).is_ok());
    Ok(out)
}

fn assign_step<S: Scalar>(
    points: &Mat<S>,
    centroids: &Mat<S>,
    cfg: &AnnConfig,
    assignments: &mut [usize],
) -> Result<()> {
    let index = AnnIndex::build(centroids, cfg)?;
    for (i, slot) in assignments.iter_mut().enumerate() {
        let hit = index.query(points.row(i), 1);
        *slot = hit[0].0;
    }
    Ok(())
}

fn update_step<S: Scalar>(
    points: &Mat<S>,
    assignments: &[usize],
    k: usize,
) -> (Mat<S>, Vec<usize>) {
    let d = points.cols();
    let mut centroids = Mat::zeros(k, d);
    let mut sizes = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        sizes[c] += 1;
        let row = centroids.row_mut(c);
        for (m, v) in row.iter_mut().zip(points.row(i)) {
            *m += *v;
        }
    }
    for (j, &s) in sizes.iter().enumerate() {
        if s > 0 {
            let inv = S::one() / S::from_usize(s).unwrap();
            for v in centroids.row_mut(j) {
                *v *= inv;
            }
        }
    }
    (centroids, sizes)
}

/// Empty clusters grab the point farthest from its current centroid.
fn reseed_empty<S: Scalar>(
    points: &Mat<S>,
    old_centroids: &Mat<S>,
    assignments: &[usize],
    sizes: &[usize],
    centroids: &mut Mat<S>,
) {
    let mut used = vec![false; points.rows()];
    for j in 0..sizes.len() {
        if sizes[j] > 0 {
            continue;
        }
        let mut far = HeapItem { dist: -1.0, idx: 0 };
        for (i, &c) in assignments.iter().enumerate() {
            if used[i] {
                continue;
            }
            let dist = sq_dist(points.row(i), old_centroids.row(c)).as_f64();
            if dist > far.dist {
                far = HeapItem { dist, idx: i as u32 };
            }
        }
        let pick = far.idx as usize;
        used[pick] = true;
        centroids.row_mut(j).copy_from_slice(points.row(pick));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mat::zeros(n, d);
        for v in m.data_mut() {
            *v = rng.sample(StandardNormal);
        }
        m
    }

    #[test]
    fn adaptive_k_examples() {
        assert_eq!(adaptive_k(100, 64), 10);
        assert_eq!(adaptive_k(2550, 100), 50);
        assert_eq!(adaptive_k(44112, 128), 128);
        assert_eq!(adaptive_k(1, 10), 1);
        assert_eq!(adaptive_k(3, 10), 1);
    }

    #[test]
    fn exact_query_on_a_line() {
        let pts = Mat::from_rows(&[vec![0.0f64, 0.0], vec![1.0, 0.0], vec![3.0, 0.0]]);
        let index = AnnIndex::build(&pts, &AnnConfig::default()).unwrap();
        assert!(index.is_exact());
        let hit = index.query(&[0.9, 0.0], 1);
        assert_eq!(hit[0].0, 1);
        // coincident query returns that point with zero distance
        let hit = index.query(&[3.0, 0.0], 1);
        assert_eq!(hit[0], (2, 0.0));
    }

    #[test]
    fn exact_ties_break_by_index() {
        let pts = Mat::from_rows(&[vec![1.0f64, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]]);
        let index = AnnIndex::build(&pts, &AnnConfig::default()).unwrap();
        let hits = index.query(&[0.0, 0.0], 3);
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn graph_regime_recall_on_gaussian_points() {
        let pts = gaussian(3000, 16, 5);
        let cfg = AnnConfig {
            exact_threshold: 100,
            ..AnnConfig::default()
        };
        let index = AnnIndex::build(&pts, &cfg).unwrap();
        assert!(!index.is_exact());
        let exact_cfg = AnnConfig {
            exact_threshold: usize::MAX,
            ..AnnConfig::default()
        };
        let exact = AnnIndex::build(&pts, &exact_cfg).unwrap();
        assert!(exact.is_exact());
        let mut hits = 0usize;
        let mut total = 0usize;
        for qi in (0..3000).step_by(60) {
            let q = pts.row(qi);
            let truth: Vec<usize> = exact.query(q, 10).into_iter().map(|h| h.0).collect();
            let got: Vec<usize> = index.query(q, 10).into_iter().map(|h| h.0).collect();
            total += truth.len();
            hits += truth.iter().filter(|t| got.contains(t)).count();
        }
        let recall = hits as f64 / total as f64;
        assert!(recall >= 0.9, "recall {recall}");
    }

    #[test]
    fn kmeans_k1_is_global_mean() {
        let pts = gaussian(40, 4, 9);
        let cs = ann_kmeans(&pts, 1, &AnnConfig::default(), 1).unwrap();
        let mean = pts.row_mean();
        for (a, b) in cs.centroids.row(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(cs.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn kmeans_k_equals_n_zero_wcss() {
        let pts = Mat::from_rows(&[
            vec![0.0f64, 0.0],
            vec![5.0, 0.0],
            vec![0.0, 5.0],
            vec![5.0, 5.0],
        ]);
        let cs = ann_kmeans(&pts, 4, &AnnConfig::default(), 3).unwrap();
        assert_eq!(cs.wcss(&pts), 0.0);
        let mut sorted = cs.assignments.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_separated_blobs_recover_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rows = Vec::new();
        for blob in 0..2u32 {
            let center = if blob == 0 { -4.0 } else { 4.0 };
            for _ in 0..50 {
                let mut row = vec![0.0; 3];
                for v in row.iter_mut() {
                    let noise: f64 = rng.sample(StandardNormal);
                    *v = center + noise * 0.5;
                }
                rows.push(row);
            }
        }
        let pts = Mat::from_rows(&rows);
        let cs = ann_kmeans(&pts, 2, &AnnConfig::default(), 7).unwrap();
        cs.validate(&pts).unwrap();
        let mut centers: Vec<f64> = (0..2).map(|j| cs.centroids.get(j, 0)).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] + 4.0).abs() < 0.3);
        assert!((centers[1] - 4.0).abs() < 0.3);
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let pts = gaussian(3, 2, 0);
        assert!(ann_kmeans(&pts, 4, &AnnConfig::default(), 0).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts = gaussian(200, 8, 21);
        let a = ann_kmeans(&pts, 12, &AnnConfig::default(), 5).unwrap();
        let b = ann_kmeans(&pts, 12, &AnnConfig::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_fill_k_centers() {
        let mut rows = vec![vec![1.0f64, 1.0]; 6];
        rows.push(vec![4.0, 4.0]);
        let pts = Mat::from_rows(&rows);
        let cs = ann_kmeans(&pts, 2, &AnnConfig::default(), 0).unwrap();
        cs.validate(&pts).unwrap();
    }
}
