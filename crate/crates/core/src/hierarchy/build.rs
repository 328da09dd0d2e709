//! Agglomeration: leaves seeded from the flat clustering, a min-cost heap of
//! ANN-proposed merge candidates, and a shrinking acceptance threshold. Every
//! rejection tightens the threshold by `alpha`, so the loop provably
//! terminates: acceptances reduce the live-cluster count, rejections burn
//! threshold budget, stale pops drain the heap.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::ann::{AnnConfig, AnnIndex, ClusterSet};
use crate::attention::EnhancedEmbeddings;
use crate::error::{Error, Result};
use crate::hierarchy::{initial_threshold, merge_cost, Hierarchy, HierarchyNode, Linkage};
use crate::linalg::{sq_dist, total_variance, Mat};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig<S> {
    /// Absolute annealing floor; `None` derives `floor_frac * tau0`.
    pub tau_min: Option<S>,
    /// Fraction of the initial threshold used as the floor when `tau_min`
    /// is not set.
    pub floor_frac: S,
    /// Threshold decay per rejection, in (0, 1).
    pub alpha: S,
    /// Merge candidates proposed per cluster.
    pub ann_neighbors: usize,
    /// Merged nodes larger than this get the contrastive split.
    pub split_threshold: usize,
    /// Relative within-cluster-variance improvement below which the split
    /// refinement stops.
    pub tau_contrast: S,
    pub max_refine_iters: usize,
    pub linkage: Linkage,
    /// Push rejected candidates back on the heap. With a shrinking threshold
    /// a rejected candidate can never be re-admitted, so this only drains
    /// the threshold budget faster; kept for the alternative reading.
    pub reinsert_rejected: bool,
    /// Index settings for neighbor proposals.
    pub ann: AnnConfig,
}

impl<S: Scalar> Default for MergeConfig<S> {
    fn default() -> Self {
        MergeConfig {
            tau_min: None,
            floor_frac: S::of(0.05),
            alpha: S::of(0.95),
            ann_neighbors: 10,
            split_threshold: 100,
            tau_contrast: S::of(1e-3),
            max_refine_iters: 20,
            linkage: Linkage::WardAttention,
            reinsert_rejected: false,
            ann: AnnConfig::default(),
        }
    }
}

impl<S: Scalar> MergeConfig<S> {
    pub fn validate(&self) -> Result<()> {
        let a = self.alpha.as_f64();
        if !(0.0 < a && a < 1.0) {
            return Err(Error::InvalidConfig("alpha must be in (0, 1)".into()));
        }
        if let Some(t) = self.tau_min {
            if t.as_f64() <= 0.0 {
                return Err(Error::InvalidConfig("tau_min must be positive".into()));
            }
        }
        if self.floor_frac.as_f64() <= 0.0 || self.floor_frac.as_f64() >= 1.0 {
            return Err(Error::InvalidConfig("floor_frac must be in (0, 1)".into()));
        }
        if self.ann_neighbors == 0 {
            return Err(Error::InvalidConfig("ann_neighbors must be positive".into()));
        }
        if self.tau_contrast.as_f64() <= 0.0 {
            return Err(Error::InvalidConfig("tau_contrast must be positive".into()));
        }
        Ok(())
    }
}

/// Instrumentation for the termination and annealing invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStats {
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_final: f64,
    pub initial_candidates: usize,
    pub iterations: usize,
    pub merges: usize,
    pub rejections: usize,
    pub stale_discards: usize,
    pub splits: usize,
}

/// Heap entry: min-cost first, ties by the id pair so pop order is total.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    gen_a: u32,
    gen_b: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .partial_cmp(&other.cost)
            .unwrap()
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn mix_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the merge forest over the flat clusters and attaches a virtual
/// root. `seed` drives the split's 2-means starts (one derived stream per
/// node id) and any graph-regime neighbor index.
pub fn build_hierarchy<S: Scalar>(
    clusters: &ClusterSet<S>,
    enhanced: &EnhancedEmbeddings<S>,
    cfg: &MergeConfig<S>,
    seed: u64,
) -> Result<(Hierarchy<S>, MergeStats)> {
    cfg.validate()?;
    let e_prime = &enhanced.e_prime;
    let n = e_prime.rows();
    let d = e_prime.cols();
    if clusters.assignments.len() != n {
        return Err(Error::InvalidInput(
            "cluster assignments do not match embedding rows".into(),
        ));
    }
    let k = clusters.k;
    let v_global = {
        let v = total_variance(e_prime).as_f64();
        S::of(v.max(1e-12))
    };

    // leaves mirror the flat clustering
    let mut nodes: Vec<HierarchyNode<S>> = Vec::with_capacity(2 * k);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (row, &c) in clusters.assignments.iter().enumerate() {
        buckets[c].push(row as u32);
    }
    for (j, members) in buckets.into_iter().enumerate() {
        let size = members.len();
        nodes.push(HierarchyNode {
            id: j,
            parent: None,
            children: Vec::new(),
            members,
            centroid: clusters.centroids.row(j).to_vec(),
            size,
            generation: 0,
        });
    }

    let mut stats = MergeStats {
        tau0: 0.0,
        tau_min: 0.0,
        tau_final: 0.0,
        initial_candidates: 0,
        iterations: 0,
        merges: 0,
        rejections: 0,
        stale_discards: 0,
        splits: 0,
    };
    let mut live: BTreeSet<usize> = (0..k).collect();

    if k >= 2 {
        // threshold comes from the full pairwise cost set, candidates from
        // each cluster's nearest neighbors
        let mut pair_costs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut all_costs: Vec<S> = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in (i + 1)..k {
                let c = merge_cost(&nodes[i], &nodes[j], cfg.linkage, e_prime, v_global);
                pair_costs.insert((i, j), c.as_f64());
                all_costs.push(c);
            }
        }
        let tau0 = initial_threshold(&all_costs)?.as_f64();
        let tau_min = cfg
            .tau_min
            .map(|t| t.as_f64())
            .unwrap_or(cfg.floor_frac.as_f64() * tau0);
        let mut tau = tau0;
        stats.tau0 = tau0;
        stats.tau_min = tau_min;

        let index = AnnIndex::build(&clusters.centroids, &cfg.ann)?;
        let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
        for i in 0..k {
            for (j, _) in index.query(nodes[i].centroid.as_slice(), cfg.ann_neighbors + 1) {
                if j != i {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
        let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::new();
        for &(a, b) in &pairs {
            heap.push(std::cmp::Reverse(Candidate {
                cost: pair_costs[&(a, b)],
                a,
                b,
                gen_a: 0,
                gen_b: 0,
            }));
        }
        stats.initial_candidates = pairs.len();

        loop {
            if tau <= tau_min {
                break;
            }
            let Some(std::cmp::Reverse(cand)) = heap.pop() else {
                break;
            };
            stats.iterations += 1;
            let stale = nodes[cand.a].parent.is_some()
                || nodes[cand.b].parent.is_some()
                || nodes[cand.a].generation != cand.gen_a
                || nodes[cand.b].generation != cand.gen_b;
            if stale {
                stats.stale_discards += 1;
                continue;
            }
            if cand.cost > tau {
                tau *= cfg.alpha.as_f64();
                stats.rejections += 1;
                if cfg.reinsert_rejected {
                    heap.push(std::cmp::Reverse(cand));
                }
                continue;
            }

            // accept: new node over a and b
            let new_id = nodes.len();
            let (a, b) = (cand.a, cand.b);
            let size = nodes[a].size + nodes[b].size;
            let mut members = Vec::with_capacity(size);
            merge_sorted(&nodes[a].members, &nodes[b].members, &mut members);
            let na = S::from_usize(nodes[a].size).unwrap();
            let nb = S::from_usize(nodes[b].size).unwrap();
            let inv = S::one() / (na + nb);
            let centroid: Vec<S> = (0..d)
                .map(|c| (na * nodes[a].centroid[c] + nb * nodes[b].centroid[c]) * inv)
                .collect();
            nodes.push(HierarchyNode {
                id: new_id,
                parent: None,
                children: vec![a, b],
                members,
                centroid,
                size,
                generation: 0,
            });
            nodes[a].parent = Some(new_id);
            nodes[b].parent = Some(new_id);
            live.remove(&a);
            live.remove(&b);
            stats.merges += 1;

            if size > cfg.split_threshold {
                let subs = split_and_refine(
                    &mut nodes,
                    new_id,
                    e_prime,
                    cfg.tau_contrast,
                    cfg.max_refine_iters,
                    mix_seed(seed, new_id),
                );
                if !subs.is_empty() {
                    stats.splits += 1;
                }
            }

            // propose merges between the new node and its nearest live peers
            if !live.is_empty() {
                let others: Vec<usize> = live.iter().copied().collect();
                let mut centroids = Mat::zeros(others.len(), d);
                for (slot, &id) in others.iter().enumerate() {
                    centroids.row_mut(slot).copy_from_slice(&nodes[id].centroid);
                }
                let peer_index = AnnIndex::build(&centroids, &cfg.ann)?;
                let mut chosen: Vec<usize> = peer_index
                    .query(nodes[new_id].centroid.as_slice(), cfg.ann_neighbors)
                    .into_iter()
                    .map(|(slot, _)| others[slot])
                    .collect();
                chosen.sort_unstable();
                for other in chosen {
                    let cost = merge_cost(
                        &nodes[other],
                        &nodes[new_id],
                        cfg.linkage,
                        e_prime,
                        v_global,
                    );
                    heap.push(std::cmp::Reverse(Candidate {
                        cost: cost.as_f64(),
                        a: other,
                        b: new_id,
                        gen_a: nodes[other].generation,
                        gen_b: nodes[new_id].generation,
                    }));
                }
            }
            live.insert(new_id);
        }
        stats.tau_final = tau;
    }

    // virtual root over the surviving forest
    let virtual_id = nodes.len();
    let roots: Vec<usize> = live.iter().copied().collect();
    let mut all_members: Vec<u32> = (0..n as u32).collect();
    all_members.sort_unstable();
    let centroid = e_prime.row_mean();
    for &r in &roots {
        nodes[r].parent = Some(virtual_id);
    }
    nodes.push(HierarchyNode {
        id: virtual_id,
        parent: None,
        children: roots.clone(),
        members: all_members,
        centroid,
        size: n,
        generation: 0,
    });

    let h = Hierarchy::from_parts(nodes, roots, virtual_id);
    debug_assert!(h.validate(Some(e_prime)).is_ok());
    Ok((h, stats))
}

fn merge_sorted(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
}

/// Splits an oversized node in two with a seeded 2-means over its members,
/// refined until the within-cluster sum of squares stops improving by more
/// than `tau_contrast` relative, then wires the sub-clusters in between the
/// node and its previous children (each child goes under the nearest
/// sub-centroid). A leaf splits its member set directly. Degenerate outcomes
/// (an empty side, or every child on one side) change nothing and return an
/// empty list; otherwise the two new sub-node ids are returned.
pub fn split_and_refine<S: Scalar>(
    nodes: &mut Vec<HierarchyNode<S>>,
    node_id: usize,
    e_prime: &Mat<S>,
    tau_contrast: S,
    max_refine_iters: usize,
    seed: u64,
) -> Vec<usize> {
    let members = nodes[node_id].members.clone();
    if members.len() < 2 {
        return Vec::new();
    }
    let Some((centers, sides)) = two_means(
        e_prime,
        &members,
        tau_contrast.as_f64(),
        max_refine_iters,
        seed,
    ) else {
        return Vec::new();
    };

    let d = e_prime.cols();
    if nodes[node_id].is_leaf() {
        // leaves split their member set directly
        let mut split_members = [Vec::new(), Vec::new()];
        for (&m, &s) in members.iter().zip(&sides) {
            split_members[s].push(m);
        }
        let base = nodes.len();
        for (slot, ms) in split_members.into_iter().enumerate() {
            let centroid = member_mean(e_prime, &ms);
            let size = ms.len();
            nodes.push(HierarchyNode {
                id: base + slot,
                parent: Some(node_id),
                children: Vec::new(),
                members: ms,
                centroid,
                size,
                generation: 0,
            });
        }
        let node = &mut nodes[node_id];
        node.children = vec![base, base + 1];
        node.generation += 1;
        return vec![base, base + 1];
    }

    // internal node: children follow their nearest sub-centroid
    let children = nodes[node_id].children.clone();
    let mut child_sides = Vec::with_capacity(children.len());
    for &c in &children {
        let d0 = sq_dist(&nodes[c].centroid, &centers[0]);
        let d1 = sq_dist(&nodes[c].centroid, &centers[1]);
        child_sides.push(if d1 < d0 { 1 } else { 0 });
    }
    if child_sides.iter().all(|&s| s == 0) || child_sides.iter().all(|&s| s == 1) {
        return Vec::new();
    }
    let base = nodes.len();
    for side in 0..2 {
        let assigned: Vec<usize> = children
            .iter()
            .zip(&child_sides)
            .filter(|(_, &s)| s == side)
            .map(|(&c, _)| c)
            .collect();
        let mut ms: Vec<u32> = Vec::new();
        for &c in &assigned {
            let mut merged = Vec::with_capacity(ms.len() + nodes[c].members.len());
            merge_sorted(&ms, &nodes[c].members, &mut merged);
            ms = merged;
        }
        let centroid = if ms.is_empty() {
            vec![S::zero(); d]
        } else {
            member_mean(e_prime, &ms)
        };
        let size = ms.len();
        let sub_id = base + side;
        for &c in &assigned {
            nodes[c].parent = Some(sub_id);
        }
        nodes.push(HierarchyNode {
            id: sub_id,
            parent: Some(node_id),
            children: assigned,
            members: ms,
            centroid,
            size,
            generation: 0,
        });
    }
    let node = &mut nodes[node_id];
    node.children = vec![base, base + 1];
    node.generation += 1;
    vec![base, base + 1]
}

fn member_mean<S: Scalar>(e_prime: &Mat<S>, members: &[u32]) -> Vec<S> {
    let d = e_prime.cols();
    let mut mean = vec![S::zero(); d];
    for &m in members {
        for (acc, v) in mean.iter_mut().zip(e_prime.row(m as usize)) {
            *acc += *v;
        }
    }
    let inv = S::one() / S::from_usize(members.len()).unwrap();
    for v in mean.iter_mut() {
        *v *= inv;
    }
    mean
}

/// Seeded 2-means over a member subset. Returns the final centers and the
/// per-member side, or `None` for degenerate splits.
fn two_means<S: Scalar>(
    e_prime: &Mat<S>,
    members: &[u32],
    rel_tol: f64,
    max_iters: usize,
    seed: u64,
) -> Option<([Vec<S>; 2], Vec<usize>)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ms = members.len();
    let first = rng.gen_range(0..ms);
    let d2: Vec<f64> = members
        .iter()
        .map(|&m| sq_dist(e_prime.row(m as usize), e_prime.row(members[first] as usize)).as_f64())
        .collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return None; // all members coincide
    }
    let mut target = rng.gen_range(0.0..total);
    let mut second = d2.iter().rposition(|&w| w > 0.0).unwrap();
    for (i, &w) in d2.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        if target < w {
            second = i;
            break;
        }
        target -= w;
    }

    let mut centers = [
        e_prime.row(members[first] as usize).to_vec(),
        e_prime.row(members[second] as usize).to_vec(),
    ];
    let mut sides = vec![0usize; ms];
    let mut prev_wcss = f64::INFINITY;
    for _ in 0..max_iters {
        let mut counts = [0usize; 2];
        for (slot, &m) in members.iter().enumerate() {
            let row = e_prime.row(m as usize);
            let d0 = sq_dist(row, &centers[0]).as_f64();
            let d1 = sq_dist(row, &centers[1]).as_f64();
            let side = if d1 < d0 { 1 } else { 0 };
            sides[slot] = side;
            counts[side] += 1;
        }
        if counts[0] == 0 || counts[1] == 0 {
            return None;
        }
        let d = e_prime.cols();
        let mut next = [vec![S::zero(); d], vec![S::zero(); d]];
        for (slot, &m) in members.iter().enumerate() {
            let acc = &mut next[sides[slot]];
            for (a, v) in acc.iter_mut().zip(e_prime.row(m as usize)) {
                *a += *v;
            }
        }
        for side in 0..2 {
            let inv = S::one() / S::from_usize(counts[side]).unwrap();
            for v in next[side].iter_mut() {
                *v *= inv;
            }
        }
        centers = next;
        let mut wcss = 0.0;
        for (slot, &m) in members.iter().enumerate() {
            wcss += sq_dist(e_prime.row(m as usize), &centers[sides[slot]]).as_f64();
        }
        // Lloyd steps cannot raise the objective
        debug_assert!(wcss <= prev_wcss * (1.0 + 1e-9) + 1e-12);
        if prev_wcss.is_finite() {
            if wcss <= 0.0 || (prev_wcss - wcss) / prev_wcss < rel_tol {
                prev_wcss = wcss;
                break;
            }
        }
        prev_wcss = wcss;
    }
    let _ = prev_wcss;
    Some((centers, sides))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::ann_kmeans;
    use crate::attention::EnhancedEmbeddings;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn enhanced_of(e_prime: Mat<f64>) -> EnhancedEmbeddings<f64> {
        let weights = Mat::zeros(e_prime.rows(), 1);
        EnhancedEmbeddings { e_prime, weights }
    }

    fn blob_matrix(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for &(cx, cy) in centers {
            for _ in 0..per {
                rows.push(vec![
                    cx + rng.gen_range(-spread..spread),
                    cy + rng.gen_range(-spread..spread),
                ]);
            }
        }
        Mat::from_rows(&rows)
    }

    #[test]
    fn two_clusters_one_merge() {
        let e = blob_matrix(&[(0.0, 0.0), (1.0, 0.0)], 5, 0.2, 1);
        let clusters = ann_kmeans(&e, 2, &AnnConfig::default(), 1).unwrap();
        let enhanced = enhanced_of(e);
        let (h, stats) =
            build_hierarchy(&clusters, &enhanced, &MergeConfig::default(), 0).unwrap();
        // the only candidate's cost equals tau0, so it is accepted
        assert_eq!(stats.merges, 1);
        assert_eq!(h.leaf_count(), 2);
        assert_eq!(h.node_count(), 3);
        assert_eq!(h.roots().len(), 1);
        h.validate(Some(&enhanced.e_prime)).unwrap();
    }

    #[test]
    fn floor_above_initial_threshold_means_no_merges() {
        let e = blob_matrix(&[(0.0, 0.0), (4.0, 0.0), (0.0, 4.0)], 4, 0.2, 2);
        let clusters = ann_kmeans(&e, 3, &AnnConfig::default(), 2).unwrap();
        let enhanced = enhanced_of(e);
        let cfg = MergeConfig {
            tau_min: Some(1e12),
            ..MergeConfig::default()
        };
        let (h, stats) = build_hierarchy(&clusters, &enhanced, &cfg, 0).unwrap();
        assert_eq!(stats.merges, 0);
        assert_eq!(h.leaf_count(), 3);
        assert_eq!(h.roots().len(), 3);
        h.validate(Some(&enhanced.e_prime)).unwrap();
    }

    #[test]
    fn separated_blob_groups_stay_separate_subtrees() {
        // 4 far blobs, over-clustered at k=8: same-blob leaves merge, the
        // cross-blob merges cost far above the threshold and anneal out
        let e = blob_matrix(
            &[(0.0, 0.0), (40.0, 0.0), (0.0, 40.0), (40.0, 40.0)],
            25,
            0.8,
            3,
        );
        let clusters = ann_kmeans(&e, 8, &AnnConfig::default(), 3).unwrap();
        let enhanced = enhanced_of(e);
        let (h, stats) =
            build_hierarchy(&clusters, &enhanced, &MergeConfig::default(), 0).unwrap();
        h.validate(Some(&enhanced.e_prime)).unwrap();
        assert_eq!(h.roots().len(), 4, "stats: {stats:?}");
        // each root subtree holds exactly one blob's 25 points
        let labels = h.root_cut_labels().unwrap();
        for blob in 0..4 {
            let slice: Vec<usize> = labels[blob * 25..(blob + 1) * 25].to_vec();
            assert!(slice.iter().all(|&l| l == slice[0]));
        }
    }

    #[test]
    fn termination_bounds_hold() {
        let e = blob_matrix(
            &[(0.0, 0.0), (6.0, 0.0), (0.0, 6.0), (6.0, 6.0), (3.0, 3.0)],
            20,
            1.5,
            4,
        );
        let clusters = ann_kmeans(&e, 10, &AnnConfig::default(), 4).unwrap();
        let enhanced = enhanced_of(e);
        let cfg = MergeConfig::<f64>::default();
        let (_, stats) = build_hierarchy(&clusters, &enhanced, &cfg, 0).unwrap();
        assert!(
            stats.iterations
                <= stats.initial_candidates + 2 * stats.merges * cfg.ann_neighbors
        );
        let max_rejections =
            (cfg.floor_frac.ln() / cfg.alpha.ln()).ceil() as usize;
        assert!(stats.rejections <= max_rejections, "stats: {stats:?}");
        assert!(stats.tau_final <= stats.tau0);
    }

    #[test]
    fn builds_are_deterministic() {
        let e = blob_matrix(&[(0.0, 0.0), (8.0, 0.0), (4.0, 7.0)], 30, 1.0, 5);
        let clusters = ann_kmeans(&e, 6, &AnnConfig::default(), 5).unwrap();
        let enhanced = enhanced_of(e);
        let (h1, s1) = build_hierarchy(&clusters, &enhanced, &MergeConfig::default(), 9).unwrap();
        let (h2, s2) = build_hierarchy(&clusters, &enhanced, &MergeConfig::default(), 9).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn accepted_costs_never_exceed_threshold_at_acceptance() {
        // reinsertion mode still terminates and keeps the stats invariants
        let e = blob_matrix(&[(0.0, 0.0), (5.0, 0.0), (0.0, 5.0)], 15, 1.2, 6);
        let clusters = ann_kmeans(&e, 6, &AnnConfig::default(), 6).unwrap();
        let enhanced = enhanced_of(e);
        let cfg = MergeConfig {
            reinsert_rejected: true,
            ..MergeConfig::default()
        };
        let (h, stats) = build_hierarchy(&clusters, &enhanced, &cfg, 0).unwrap();
        h.validate(Some(&enhanced.e_prime)).unwrap();
        let max_rejections = (0.05f64.ln() / 0.95f64.ln()).ceil() as usize;
        assert!(stats.rejections <= max_rejections);
    }

    #[test]
    fn split_separates_two_blob_merge() {
        let e = blob_matrix(&[(0.0, 0.0), (30.0, 0.0)], 20, 0.5, 7);
        // one leaf per blob, then a forced parent over both
        let mut nodes = Vec::new();
        for blob in 0..2usize {
            let members: Vec<u32> = (blob as u32 * 20..(blob as u32 + 1) * 20).collect();
            let centroid = member_mean(&e, &members);
            nodes.push(HierarchyNode {
                id: blob,
                parent: Some(2),
                children: Vec::new(),
                members,
                centroid,
                size: 20,
                generation: 0,
            });
        }
        let members: Vec<u32> = (0..40).collect();
        let centroid = member_mean(&e, &members);
        nodes.push(HierarchyNode {
            id: 2,
            parent: None,
            children: vec![0, 1],
            members,
            centroid,
            size: 40,
            generation: 0,
        });
        let subs = split_and_refine(&mut nodes, 2, &e, 1e-3, 20, 11);
        assert_eq!(subs.len(), 2);
        // each sub-node wraps exactly one original blob leaf
        let kids: Vec<Vec<usize>> = subs.iter().map(|&s| nodes[s].children.clone()).collect();
        assert_eq!(kids.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1]);
        assert_ne!(kids[0], kids[1]);
        for &s in &subs {
            let child = nodes[s].children[0];
            assert_eq!(nodes[s].members, nodes[child].members);
            assert_eq!(nodes[child].parent, Some(s));
        }
        assert_eq!(nodes[2].children, subs);
    }

    #[test]
    fn split_of_identical_points_is_degenerate() {
        let e = Mat::from_rows(&vec![vec![1.0, 2.0]; 10]);
        let members: Vec<u32> = (0..10).collect();
        let centroid = member_mean(&e, &members);
        let mut nodes = vec![HierarchyNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            members,
            centroid,
            size: 10,
            generation: 0,
        }];
        let before = nodes.clone();
        let subs = split_and_refine(&mut nodes, 0, &e, 1e-3, 20, 0);
        assert!(subs.is_empty());
        assert_eq!(nodes, before);
    }

    #[test]
    fn leaf_split_partitions_members() {
        let e = blob_matrix(&[(0.0, 0.0), (20.0, 0.0)], 10, 0.4, 8);
        let members: Vec<u32> = (0..20).collect();
        let centroid = member_mean(&e, &members);
        let mut nodes = vec![HierarchyNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            members,
            centroid,
            size: 20,
            generation: 0,
        }];
        let subs = split_and_refine(&mut nodes, 0, &e, 1e-3, 20, 21);
        assert_eq!(subs.len(), 2);
        let mut sizes: Vec<usize> = subs.iter().map(|&s| nodes[s].size).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10]);
        let mut union: Vec<u32> = subs
            .iter()
            .flat_map(|&s| nodes[s].members.clone())
            .collect();
        union.sort_unstable();
        assert_eq!(union, (0..20).collect::<Vec<u32>>());
    }
}
