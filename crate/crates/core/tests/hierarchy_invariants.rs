//! Structural and termination invariants of the merge loop over randomized
//! inputs, plus end-to-end assignment accuracy on generated data.

mod common;

use common::*;
use hic_core::ann::{adaptive_k, ann_kmeans, AnnConfig};
use hic_core::attention::{attention_forward, AttentionMode, AttentionParams, EnhancedEmbeddings};
use hic_core::corpus::{generate_synthetic, split, SynthSpec};
use hic_core::engine::{assign_corpus, cluster_corpus};
use hic_core::hierarchy::{build_hierarchy, MergeConfig};
use hic_core::linalg::Mat;
use hic_core::RunConfig;
use rand::Rng;

fn identity_enhanced(points: &Mat<f64>) -> EnhancedEmbeddings<f64> {
    let off = AttentionParams::<f64>::init(points.cols(), 2, AttentionMode::Off, 0);
    attention_forward(points, &off).unwrap()
}

#[test]
fn invariants_hold_on_random_corpora() {
    let mut r = rng(71);
    let cfg = MergeConfig::<f64>::default();
    let max_rejections = (0.05f64.ln() / 0.95f64.ln()).ceil() as usize;
    for case in 0..100u64 {
        let n = r.gen_range(20..120);
        let d = r.gen_range(2..8);
        let points = random_points(n, d, &mut r);
        let k = adaptive_k(n, r.gen_range(4..24));
        let clusters = ann_kmeans(&points, k, &AnnConfig::default(), case).unwrap();
        let enhanced = identity_enhanced(&points);
        let (h, stats) = build_hierarchy(&clusters, &enhanced, &cfg, case).unwrap();

        h.validate(Some(&points)).unwrap();
        assert_eq!(h.len(), n, "case {case}: virtual root must cover all rows");
        assert!(h.leaf_count() >= 1 && h.leaf_count() <= k);

        // termination accounting: every iteration either merges, rejects, or
        // discards a stale candidate; proposals stay bounded
        assert_eq!(
            stats.iterations,
            stats.merges + stats.rejections + stats.stale_discards,
            "case {case}"
        );
        assert!(
            stats.rejections <= max_rejections,
            "case {case}: {} rejections",
            stats.rejections
        );
        assert!(stats.tau_final <= stats.tau0 * (1.0 + 1e-12), "case {case}");
        assert!(stats.tau_min <= stats.tau0 * (1.0 + 1e-12), "case {case}");

        // every leaf label is a live node and labels cover all rows
        let labels = h.leaf_labels().unwrap();
        assert_eq!(labels.len(), n);
    }
}

#[test]
fn deterministic_given_seed() {
    let mut r = rng(72);
    let points = random_points(150, 5, &mut r);
    let clusters = ann_kmeans(&points, 12, &AnnConfig::default(), 9).unwrap();
    let cfg = MergeConfig::<f64>::default();
    let enhanced = identity_enhanced(&points);
    let (h1, s1) = build_hierarchy(&clusters, &enhanced, &cfg, 5).unwrap();
    let (h2, s2) = build_hierarchy(&clusters, &enhanced, &cfg, 5).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);
}

#[test]
fn held_out_assignment_matches_generator_labels() {
    // well-separated generated intents: at least 95% of held-out utterances
    // land in the subtree whose leaves carry their true category
    let spec = SynthSpec::uniform(1, 5, 12, 80, 8.0, 55);
    let (corpus, _) = generate_synthetic::<f64>(&spec).unwrap();
    let halves = split(&corpus, 0.8, 3).unwrap();

    let cfg = RunConfig {
        attention_dim: 12,
        k_max: 10,
        epochs_pretrain: 10,
        epochs_dec: 5,
        seed: 4,
        ..RunConfig::default()
    };
    let outcome = cluster_corpus(&halves.train, &cfg).unwrap();
    let assignments = assign_corpus(&outcome.hierarchy, &outcome.params, &halves.validation).unwrap();

    // majority category of each leaf's training members
    let train_cats: Vec<&str> = halves
        .train
        .utterances()
        .iter()
        .map(|u| u.category.as_str())
        .collect();
    let mut leaf_major: std::collections::BTreeMap<usize, &str> = Default::default();
    for &leaf in &outcome.hierarchy.leaves() {
        let members = &outcome.hierarchy.node(leaf).members;
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        for &m in members.iter() {
            *counts.entry(train_cats[m as usize]).or_default() += 1;
        }
        let major = counts.iter().max_by_key(|(_, &c)| c).unwrap().0;
        leaf_major.insert(leaf, major);
    }

    let mut correct = 0usize;
    for (u, &(leaf, _)) in halves.validation.utterances().iter().zip(&assignments) {
        if leaf_major.get(&leaf) == Some(&u.category.as_str()) {
            correct += 1;
        }
    }
    let rate = correct as f64 / assignments.len() as f64;
    assert!(rate >= 0.95, "held-out accuracy {rate}");
}
