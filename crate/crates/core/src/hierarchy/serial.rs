//! Hierarchy persistence: one JSON document with a meta block, a node table
//! in id order, and the forest roots. Floats are rounded to 9 significant
//! digits before encoding so repeated runs produce byte-identical files.
//! Member lists are derivable from the leaf partition and are not stored;
//! a loaded hierarchy therefore supports assignment and structural queries
//! but not member-level relabeling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, HierarchyNode, Prototypes};
use crate::scalar::Scalar;

/// Run provenance stored in the file's meta block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct HierarchyFile {
    meta: RunMeta,
    nodes: Vec<NodeRecord>,
    roots: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    size: usize,
    centroid: Vec<f64>,
    /// Corpus row indices; written for leaves only. Internal nodes rebuild
    /// theirs as the union of their children on load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    members: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prototypes: Option<Vec<String>>,
}

/// Rounds to 9 significant digits; the shortest round-trip decimal encoding
/// of the result is then stable across platforms.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse::<f64>().unwrap()
}

pub fn save_hierarchy<S: Scalar>(
    path: &Path,
    h: &Hierarchy<S>,
    meta: &RunMeta,
    protos: Option<(&Prototypes, &[String])>,
) -> Result<()> {
    let mut records = Vec::with_capacity(h.nodes().len());
    for node in h.nodes() {
        let prototypes = protos.and_then(|(p, ids)| {
            p.per_leaf.get(&node.id).map(|rows| {
                rows.iter().map(|&r| ids[r as usize].clone()).collect::<Vec<String>>()
            })
        });
        records.push(NodeRecord {
            id: node.id,
            parent: node.parent,
            children: node.children.clone(),
            size: node.size,
            centroid: node.centroid.iter().map(|v| round_sig(v.as_f64())).collect(),
            members: if node.is_leaf() { node.members.clone() } else { Vec::new() },
            prototypes,
        });
    }
    let file = HierarchyFile {
        meta: meta.clone(),
        nodes: records,
        roots: h.roots().to_vec(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &file)
        .map_err(|e| Error::Internal(format!("hierarchy encoding failed: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Loads a serialized hierarchy. Leaf member rows come from the file and
/// internal memberships are rebuilt bottom-up, so the result passes the same
/// structural validation a freshly built tree does. The returned per-leaf
/// prototype map carries the utterance id strings.
pub fn load_hierarchy<S: Scalar>(
    path: &Path,
) -> Result<(Hierarchy<S>, RunMeta, BTreeMap<usize, Vec<String>>)> {
    let file: HierarchyFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::BadFormat(format!("bad hierarchy file: {e}")))?;
    let count = file.nodes.len();
    if count == 0 {
        return Err(Error::BadFormat("hierarchy file has no nodes".into()));
    }
    let mut nodes: Vec<Option<HierarchyNode<S>>> = (0..count).map(|_| None).collect();
    let mut protos = BTreeMap::new();
    let mut virtual_root = None;
    for rec in file.nodes {
        if rec.id >= count {
            return Err(Error::BadFormat(format!("node id {} out of range", rec.id)));
        }
        if rec.parent.is_none() {
            if virtual_root.replace(rec.id).is_some() {
                return Err(Error::BadFormat("multiple parentless nodes".into()));
            }
        }
        if let Some(p) = &rec.prototypes {
            protos.insert(rec.id, p.clone());
        }
        let mut members = rec.members;
        members.sort_unstable();
        let node = HierarchyNode {
            id: rec.id,
            parent: rec.parent,
            children: rec.children,
            members,
            centroid: rec.centroid.iter().map(|&v| S::of(v)).collect(),
            size: rec.size,
            generation: 0,
        };
        if nodes[rec.id].replace(node).is_some() {
            return Err(Error::BadFormat(format!("duplicate node id {}", rec.id)));
        }
    }
    let mut nodes: Vec<HierarchyNode<S>> = nodes.into_iter().map(Option::unwrap).collect();
    let virtual_root =
        virtual_root.ok_or_else(|| Error::BadFormat("no virtual root in file".into()))?;
    // Rebuild internal memberships children-first. Split nodes carry ids
    // above their parents, so walk the tree rather than ascending ids.
    let mut order = Vec::with_capacity(nodes.len());
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![(virtual_root, false)];
    seen[virtual_root] = true;
    while let Some((id, expanded)) = stack.pop() {
        if expanded {
            order.push(id);
            continue;
        }
        stack.push((id, true));
        for &c in &nodes[id].children {
            if c >= nodes.len() || std::mem::replace(&mut seen[c], true) {
                return Err(Error::BadFormat(format!("bad child link {id} -> {c}")));
            }
            stack.push((c, false));
        }
    }
    for id in order {
        if nodes[id].children.is_empty() {
            continue;
        }
        let mut union = Vec::with_capacity(nodes[id].size);
        for c in nodes[id].children.clone() {
            union.extend_from_slice(&nodes[c].members);
        }
        union.sort_unstable();
        nodes[id].members = union;
    }
    let h = Hierarchy::from_parts(nodes, file.roots, virtual_root);
    h.validate(None)
        .map_err(|e| Error::BadFormat(format!("hierarchy file fails validation: {e}")))?;
    Ok((h, file.meta, protos))
}
