//! Tree-of-clusters representation plus the merge-cost machinery, prototype
//! selection, and nearest-leaf assignment. The annealed agglomeration loop
//! that produces the tree lives in [`build`], JSON persistence in [`serial`].

mod build;
mod serial;

pub use build::{build_hierarchy, split_and_refine, MergeConfig, MergeStats};
pub use serial::{load_hierarchy, round_sig, save_hierarchy, RunMeta};

use std::collections::BTreeMap;

use crate::attention::{enhance_single, AttentionParams};
use crate::config::LinkageCfg;
use crate::error::{Error, Result};
use crate::linalg::{dist, sq_dist, Mat};
use crate::scalar::Scalar;

/// How the cost of merging two clusters is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    /// Size-weighted squared centroid gap over the global enhanced-space
    /// variance. Scale-free: doubling every coordinate leaves costs alone.
    WardAttention,
    /// Normalized Shannon entropy of the pairwise-distance histogram of the
    /// merged member set. Expensive; kept as the alternative reading.
    DistEntropy,
}

impl From<LinkageCfg> for Linkage {
    fn from(l: LinkageCfg) -> Self {
        match l {
            LinkageCfg::WardAttention => Linkage::WardAttention,
            LinkageCfg::DistEntropy => Linkage::DistEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode<S> {
    pub id: usize,
    pub parent: Option<usize>,
    /// Empty for leaves.
    pub children: Vec<usize>,
    /// Sorted utterance row indices; an internal node holds the disjoint
    /// union of its children's members.
    pub members: Vec<u32>,
    /// Mean of the members' enhanced embeddings.
    pub centroid: Vec<S>,
    pub size: usize,
    /// Bumped when the node's identity-relevant state changes; merge
    /// candidates snapshot it to detect staleness.
    pub generation: u32,
}

impl<S: Scalar> HierarchyNode<S> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// A forest of merge trees under one virtual root. Node ids are stable
/// indices into the arena and are never reused.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy<S> {
    nodes: Vec<HierarchyNode<S>>,
    roots: Vec<usize>,
    virtual_root: usize,
}

impl<S: Scalar> Hierarchy<S> {
    pub(crate) fn from_parts(
        nodes: Vec<HierarchyNode<S>>,
        roots: Vec<usize>,
        virtual_root: usize,
    ) -> Self {
        Hierarchy {
            nodes,
            roots,
            virtual_root,
        }
    }

    pub fn node(&self, id: usize) -> &HierarchyNode<S> {
        &self.nodes[id]
    }

    /// All nodes including the virtual root (always the last id).
    pub fn nodes(&self) -> &[HierarchyNode<S>] {
        &self.nodes
    }

    /// Forest roots, i.e. the children of the virtual root.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn virtual_root(&self) -> usize {
        self.virtual_root
    }

    /// Real nodes only; the serialization-side virtual root is not counted.
    pub fn node_count(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.id != self.virtual_root && n.is_leaf())
            .map(|n| n.id)
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Total utterances covered by the tree.
    pub fn len(&self) -> usize {
        self.nodes[self.virtual_root].size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether member lists are populated (a deserialized hierarchy keeps
    /// only sizes and centroids).
    pub fn has_members(&self) -> bool {
        self.nodes[self.virtual_root].members.len() == self.nodes[self.virtual_root].size
    }

    /// Per-utterance leaf id, derived from leaf member lists.
    pub fn leaf_labels(&self) -> Result<Vec<usize>> {
        if !self.has_members() {
            return Err(Error::InvalidInput(
                "hierarchy was loaded without member lists".into(),
            ));
        }
        let mut labels = vec![usize::MAX; self.len()];
        for leaf in self.leaves() {
            for &m in &self.nodes[leaf].members {
                labels[m as usize] = leaf;
            }
        }
        Ok(labels)
    }

    /// Per-utterance top-level subtree label: the index within `roots()` of
    /// the forest root containing each utterance.
    pub fn root_cut_labels(&self) -> Result<Vec<usize>> {
        if !self.has_members() {
            return Err(Error::InvalidInput(
                "hierarchy was loaded without member lists".into(),
            ));
        }
        let mut labels = vec![usize::MAX; self.len()];
        for (slot, &root) in self.roots.iter().enumerate() {
            for &m in &self.nodes[root].members {
                labels[m as usize] = slot;
            }
        }
        Ok(labels)
    }

    /// Structural soundness: one virtual root, consistent parent/child links,
    /// disjoint-union member sets, leaf sizes partitioning the corpus, and
    /// (when embeddings are supplied) centroids equal to member means.
    pub fn validate(&self, e_prime: Option<&Mat<S>>) -> Result<()> {
        let vr = self.virtual_root;
        if vr >= self.nodes.len() || self.nodes[vr].parent.is_some() {
            return Err(Error::Internal("virtual root missing or parented".into()));
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id != idx {
                return Err(Error::Internal(format!("node {idx} carries id {}", node.id)));
            }
            for &c in &node.children {
                if self.nodes[c].parent != Some(node.id) {
                    return Err(Error::Internal(format!(
                        "child {c} does not point back to {idx}"
                    )));
                }
            }
            if let Some(p) = node.parent {
                if !self.nodes[p].children.contains(&node.id) {
                    return Err(Error::Internal(format!(
                        "parent {p} does not list child {idx}"
                    )));
                }
            } else if node.id != vr && !self.roots.contains(&node.id) {
                return Err(Error::Internal(format!("orphan node {idx}")));
            }
        }

        // reachability from the virtual root covers every node exactly once
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![vr];
        let mut visited = 0usize;
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(Error::Internal(format!("node {id} reached twice")));
            }
            seen[id] = true;
            visited += 1;
            stack.extend(self.nodes[id].children.iter().copied());
        }
        if visited != self.nodes.len() {
            return Err(Error::Internal("unreachable nodes present".into()));
        }

        for node in &self.nodes {
            if self.has_members() {
                if node.size != node.members.len() {
                    return Err(Error::Internal(format!(
                        "node {} size {} but {} members",
                        node.id,
                        node.size,
                        node.members.len()
                    )));
                }
                if !node.is_leaf() || node.id == vr {
                    let mut union: Vec<u32> = Vec::with_capacity(node.size);
                    for &c in &node.children {
                        union.extend_from_slice(&self.nodes[c].members);
                    }
                    union.sort_unstable();
                    let before = union.len();
                    union.dedup();
                    if union.len() != before || union != node.members {
                        return Err(Error::Internal(format!(
                            "node {} members are not the disjoint union of its children",
                            node.id
                        )));
                    }
                }
            } else if node.id != vr && !node.is_leaf() {
                let sum: usize = node.children.iter().map(|&c| self.nodes[c].size).sum();
                if sum != node.size {
                    return Err(Error::Internal(format!(
                        "node {} size {} but children sum {sum}",
                        node.id, node.size
                    )));
                }
            }
        }

        let leaf_total: usize = self.leaves().iter().map(|&l| self.nodes[l].size).sum();
        if leaf_total != self.len() {
            return Err(Error::Internal(format!(
                "leaf sizes sum to {leaf_total}, expected {}",
                self.len()
            )));
        }

        if let Some(ep) = e_prime {
            if !self.has_members() {
                return Err(Error::InvalidInput(
                    "cannot check centroids without member lists".into(),
                ));
            }
            for node in &self.nodes {
                if node.size == 0 {
                    continue;
                }
                let mut mean = vec![S::zero(); ep.cols()];
                for &m in &node.members {
                    for (acc, v) in mean.iter_mut().zip(ep.row(m as usize)) {
                        *acc += *v;
                    }
                }
                let inv = S::one() / S::from_usize(node.size).unwrap();
                for v in mean.iter_mut() {
                    *v *= inv;
                }
                let drift = dist(&mean, &node.centroid).as_f64();
                if drift > 1e-6 {
                    return Err(Error::Internal(format!(
                        "node {} centroid drifts {drift:.3e} from member mean",
                        node.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cost of merging two live clusters under the chosen linkage. `v_global`
/// is the total variance of the enhanced embeddings (floored away from 0).
pub fn merge_cost<S: Scalar>(
    a: &HierarchyNode<S>,
    b: &HierarchyNode<S>,
    linkage: Linkage,
    e_prime: &Mat<S>,
    v_global: S,
) -> S {
    match linkage {
        Linkage::WardAttention => {
            let na = S::from_usize(a.size).unwrap();
            let nb = S::from_usize(b.size).unwrap();
            na * nb / (na + nb) * sq_dist(&a.centroid, &b.centroid) / v_global
        }
        Linkage::DistEntropy => dist_entropy_cost(a, b, e_prime),
    }
}

const ENTROPY_BINS: usize = 16;

/// Shannon entropy (normalized to [0,1]) of the 16-bin histogram of all
/// pairwise member distances in the union. Tight unions concentrate mass in
/// few bins and score low; diffuse ones score high.
fn dist_entropy_cost<S: Scalar>(a: &HierarchyNode<S>, b: &HierarchyNode<S>, e_prime: &Mat<S>) -> S {
    let mut rows: Vec<u32> = Vec::with_capacity(a.size + b.size);
    rows.extend_from_slice(&a.members);
    rows.extend_from_slice(&b.members);
    let mut dists = Vec::with_capacity(rows.len() * (rows.len().saturating_sub(1)) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(
                dist(e_prime.row(rows[i] as usize), e_prime.row(rows[j] as usize)).as_f64(),
            );
        }
    }
    if dists.is_empty() {
        return S::zero();
    }
    let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return S::zero();
    }
    let mut bins = [0usize; ENTROPY_BINS];
    for dv in &dists {
        let slot = (((dv - min) / range) * ENTROPY_BINS as f64) as usize;
        bins[slot.min(ENTROPY_BINS - 1)] += 1;
    }
    let total = dists.len() as f64;
    let mut entropy = 0.0;
    for &c in &bins {
        if c > 0 {
            let p = c as f64 / total;
            entropy -= p * p.ln();
        }
    }
    S::of(entropy / (ENTROPY_BINS as f64).ln())
}

/// Nearest-rank 75th percentile of the initial candidate costs: sorted
/// ascending, element at index ceil(0.75 len) - 1.
pub fn initial_threshold<S: Scalar>(costs: &[S]) -> Result<S> {
    if costs.is_empty() {
        return Err(Error::InvalidInput("no costs to take a percentile of".into()));
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let rank = (0.75 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1)])
}

/// Per-leaf representative utterances: up to 3 member rows closest to the
/// leaf centroid, ordered by distance. Ties prefer the smaller utterance id
/// string when `ids` is given, otherwise the smaller row index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prototypes {
    pub per_leaf: BTreeMap<usize, Vec<u32>>,
}

pub fn select_prototypes<S: Scalar>(
    h: &Hierarchy<S>,
    e_prime: &Mat<S>,
    ids: Option<&[String]>,
) -> Result<Prototypes> {
    if !h.has_members() {
        return Err(Error::InvalidInput(
            "hierarchy was loaded without member lists".into(),
        ));
    }
    let mut per_leaf = BTreeMap::new();
    for leaf in h.leaves() {
        let node = h.node(leaf);
        let mut scored: Vec<(f64, &str, u32)> = node
            .members
            .iter()
            .map(|&m| {
                let d = dist(e_prime.row(m as usize), &node.centroid).as_f64();
                let id_key = ids.map(|s| s[m as usize].as_str()).unwrap_or("");
                (d, id_key, m)
            })
            .collect();
        scored.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .unwrap()
                .then_with(|| x.1.cmp(y.1))
                .then_with(|| x.2.cmp(&y.2))
        });
        scored.truncate(3);
        per_leaf.insert(leaf, scored.into_iter().map(|(_, _, m)| m).collect());
    }
    Ok(Prototypes { per_leaf })
}

/// Routes one raw embedding to its nearest leaf. The confidence is the
/// relative margin between the two nearest leaf centroids: 0 when they are
/// equidistant, approaching 1 when the choice is unambiguous.
pub fn assign<S: Scalar>(
    h: &Hierarchy<S>,
    params: &AttentionParams<S>,
    embedding: &[S],
) -> Result<(usize, S)> {
    let leaves = h.leaves();
    if leaves.is_empty() {
        return Err(Error::InvalidInput("hierarchy has no leaves".into()));
    }
    let enhanced = enhance_single(params, embedding)?;
    let mut best: Option<(f64, usize)> = None;
    let mut second: Option<(f64, usize)> = None;
    for &leaf in &leaves {
        let d = dist(&enhanced, &h.node(leaf).centroid).as_f64();
        let entry = (d, leaf);
        match best {
            None => best = Some(entry),
            Some(b) if entry < b => {
                second = best;
                best = Some(entry);
            }
            _ => match second {
                None => second = Some(entry),
                Some(s) if entry < s => second = Some(entry),
                _ => {}
            },
        }
    }
    let (d1, leaf) = best.unwrap();
    let confidence = match second {
        None => 1.0,
        Some((d2, _)) => {
            if d2 <= 0.0 {
                0.0
            } else {
                (d2 - d1) / d2
            }
        }
    };
    Ok((leaf, S::of(confidence)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(id: usize, members: Vec<u32>, centroid: Vec<f64>) -> HierarchyNode<f64> {
        let size = members.len();
        HierarchyNode {
            id,
            parent: None,
            children: Vec::new(),
            members,
            centroid,
            size,
            generation: 0,
        }
    }

    /// Two leaves under one virtual root over 4 utterances.
    fn tiny_hierarchy() -> Hierarchy<f64> {
        let mut a = leaf(0, vec![0, 1], vec![0.0, 0.0]);
        let mut b = leaf(1, vec![2, 3], vec![4.0, 0.0]);
        a.parent = Some(2);
        b.parent = Some(2);
        let root = HierarchyNode {
            id: 2,
            parent: None,
            children: vec![0, 1],
            members: vec![0, 1, 2, 3],
            centroid: vec![2.0, 0.0],
            size: 4,
            generation: 0,
        };
        Hierarchy::from_parts(vec![a, b, root], vec![0, 1], 2)
    }

    #[test]
    fn ward_cost_singletons() {
        let a = leaf(0, vec![0], vec![0.0, 0.0]);
        let b = leaf(1, vec![1], vec![2.0, 0.0]);
        let ep = Mat::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]);
        let cost = merge_cost(&a, &b, Linkage::WardAttention, &ep, 1.0);
        assert!((cost - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ward_cost_identical_centroids_is_zero() {
        let a = leaf(0, vec![0, 1], vec![1.0, 1.0]);
        let b = leaf(1, vec![2], vec![1.0, 1.0]);
        let ep = Mat::zeros(3, 2);
        assert_eq!(merge_cost(&a, &b, Linkage::WardAttention, &ep, 1.0), 0.0);
    }

    #[test]
    fn ward_cost_matches_direct_formula() {
        let a = leaf(0, vec![0, 1, 2], vec![1.0, -2.0]);
        let b = leaf(1, vec![3, 4], vec![-0.5, 3.0]);
        let ep = Mat::zeros(5, 2);
        let v = 2.5;
        let gap = (1.0f64 - -0.5).powi(2) + (-2.0f64 - 3.0).powi(2);
        let want = (3.0 * 2.0 / 5.0) * gap / v;
        let got = merge_cost(&a, &b, Linkage::WardAttention, &ep, v);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn entropy_cost_zero_for_coincident_points() {
        let a = leaf(0, vec![0, 1], vec![1.0, 1.0]);
        let b = leaf(1, vec![2], vec![1.0, 1.0]);
        let ep = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(merge_cost(&a, &b, Linkage::DistEntropy, &ep, 1.0), 0.0);
    }

    #[test]
    fn entropy_cost_higher_for_spread_union() {
        // distances in the tight union fall in one bin; the spread union
        // mixes short and long distances across bins
        let tight_a = leaf(0, vec![0, 1], vec![0.0, 0.0]);
        let tight_b = leaf(1, vec![2, 3], vec![0.0, 0.0]);
        let ep_tight = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ]);
        let spread_a = leaf(0, vec![0, 1], vec![0.0, 0.0]);
        let spread_b = leaf(1, vec![2, 3], vec![0.0, 0.0]);
        let ep_spread = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![7.0, 0.0],
            vec![7.1, 3.0],
        ]);
        let tight = merge_cost(&tight_a, &tight_b, Linkage::DistEntropy, &ep_tight, 1.0);
        let spread = merge_cost(&spread_a, &spread_b, Linkage::DistEntropy, &ep_spread, 1.0);
        assert!(spread > tight);
        assert!(tight >= 0.0 && spread <= 1.0);
    }

    #[test]
    fn threshold_nearest_rank() {
        assert_eq!(initial_threshold(&[0.1, 0.2, 0.3, 0.4]).unwrap(), 0.3);
        assert_eq!(initial_threshold(&[5.0]).unwrap(), 5.0);
        assert_eq!(initial_threshold(&[0.4, 0.1, 0.3, 0.2]).unwrap(), 0.3);
        assert!(initial_threshold::<f64>(&[]).is_err());
    }

    #[test]
    fn threshold_on_uniform_samples_sits_near_three_quarters() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let costs: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t = initial_threshold(&costs).unwrap();
        assert!((t - 0.75).abs() < 0.05, "got {t}");
    }

    #[test]
    fn prototypes_one_dimensional_example() {
        // members at 0, 1, 2, 10: mean 3.25, so order is 2, 1, 0
        let mut l = leaf(0, vec![0, 1, 2, 3], vec![3.25]);
        l.parent = Some(1);
        let root = HierarchyNode {
            id: 1,
            parent: None,
            children: vec![0],
            members: vec![0, 1, 2, 3],
            centroid: vec![3.25],
            size: 4,
            generation: 0,
        };
        let h = Hierarchy::from_parts(vec![l, root], vec![0], 1);
        let ep = Mat::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![10.0]]);
        let protos = select_prototypes(&h, &ep, None).unwrap();
        assert_eq!(protos.per_leaf[&0], vec![2, 1, 0]);
    }

    #[test]
    fn prototypes_cap_at_leaf_size() {
        let h = tiny_hierarchy();
        let ep = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![4.0, 0.0],
            vec![4.0, 0.0],
        ]);
        let protos = select_prototypes(&h, &ep, None).unwrap();
        assert_eq!(protos.per_leaf[&0].len(), 2);
        assert_eq!(protos.per_leaf[&1].len(), 2);
    }

    #[test]
    fn prototype_ties_prefer_smaller_id_string() {
        let h = tiny_hierarchy();
        // all four rows coincide with their centroid: pure tie-break
        let ep = Mat::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![4.0, 0.0],
            vec![4.0, 0.0],
        ]);
        let ids: Vec<String> = ["zz", "aa", "bb", "ab"].iter().map(|s| s.to_string()).collect();
        let protos = select_prototypes(&h, &ep, Some(&ids)).unwrap();
        assert_eq!(protos.per_leaf[&0], vec![1, 0]); // aa before zz
        assert_eq!(protos.per_leaf[&1], vec![3, 2]); // ab before bb
    }

    #[test]
    fn assign_picks_nearest_leaf_with_margin() {
        let h = tiny_hierarchy();
        let params = AttentionParams::<f64>::init(2, 2, crate::attention::AttentionMode::Off, 0);
        let (leaf, conf) = assign(&h, &params, &[0.1, 0.0]).unwrap();
        assert_eq!(leaf, 0);
        assert!(conf > 0.9);
        // equidistant point between the two centroids
        let (_, conf) = assign(&h, &params, &[2.0, 0.0]).unwrap();
        assert!(conf.abs() < 1e-12);
        // exactly on a centroid: fully confident
        let (leaf, conf) = assign(&h, &params, &[4.0, 0.0]).unwrap();
        assert_eq!(leaf, 1);
        assert!((conf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_broken_links() {
        let mut h = tiny_hierarchy();
        h.validate(None).unwrap();
        h.nodes[0].parent = None;
        assert!(h.validate(None).is_err());
    }

    #[test]
    fn validate_checks_centroid_means() {
        let h = tiny_hierarchy();
        let good = Mat::from_rows(&[
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![5.0, 0.0],
        ]);
        h.validate(Some(&good)).unwrap();
        let bad = Mat::from_rows(&[
            vec![-1.0, 0.5],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
            vec![5.0, 0.0],
        ]);
        assert!(h.validate(Some(&bad)).is_err());
    }

    #[test]
    fn labels_cover_every_row() {
        let h = tiny_hierarchy();
        assert_eq!(h.leaf_labels().unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(h.root_cut_labels().unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(h.node_count(), 2);
        assert_eq!(h.leaf_count(), 2);
    }
}
