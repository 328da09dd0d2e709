//! Sample-size stability sweep: cluster progressively larger stratified
//! samples of a fixed training split, score each run against the previous
//! one on a constant validation set, and report the smallest size at which
//! the configured criteria hold and keep holding.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::config::{seeds, RunConfig};
use crate::corpus::{split, stratified_sample, Corpus, SampleSchedule};
use crate::engine::{assign_corpus, cluster_corpus};
use crate::error::{Error, Result};
use crate::hierarchy::{save_hierarchy, Hierarchy, Prototypes, RunMeta};
use crate::linalg::{rms_row_norm, Mat};
use crate::metrics::{
    ari, calinski_harabasz, centroid_movement, davies_bouldin, greedy_match,
    low_confidence_rate, nmi, prototype_consistency, silhouette_sampled,
};
use crate::scalar::Scalar;

/// Per-size cap on the silhouette subsample; keeps the sweep subquadratic.
pub const SILHOUETTE_SAMPLE_CAP: usize = 2048;

/// One measured size. Fields comparing against the previous size are absent
/// on the first row. Degenerate geometry (a single leaf) reports 0 for the
/// shape scores with a warning rather than failing the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub leaf_count: usize,
    pub node_count: usize,
    /// Change in leaf count per added utterance vs the previous row.
    pub leaf_derivative: Option<f64>,
    /// Normalized movement of matched leaf centroids vs the previous row.
    pub movement: Option<f64>,
    pub nmi_prev: Option<f64>,
    pub ari_prev: Option<f64>,
    pub low_conf_rate: f64,
    pub proto_consistency: Option<f64>,
    pub silhouette: f64,
    pub ch: f64,
    pub db: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Derivative,
    Movement,
    Nmi,
    Ari,
    LowConfidence,
}

pub const ALL_CRITERIA: [Criterion; 5] = [
    Criterion::Derivative,
    Criterion::Movement,
    Criterion::Nmi,
    Criterion::Ari,
    Criterion::LowConfidence,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationCriteria {
    pub derivative_max: f64,
    pub movement_max: f64,
    pub nmi_min: f64,
    pub ari_min: f64,
    pub low_conf_max: f64,
    /// Criteria that must all hold, persistently, for stabilization.
    pub require: Vec<Criterion>,
}

impl Default for StabilizationCriteria {
    fn default() -> Self {
        StabilizationCriteria {
            derivative_max: 0.001,
            movement_max: 0.05,
            nmi_min: 0.85,
            ari_min: 0.85,
            low_conf_max: 0.05,
            require: vec![Criterion::Derivative, Criterion::Movement],
        }
    }
}

impl StabilizationCriteria {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("derivative_max", self.derivative_max),
            ("movement_max", self.movement_max),
            ("nmi_min", self.nmi_min),
            ("ari_min", self.ari_min),
            ("low_conf_max", self.low_conf_max),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.require.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one stabilization criterion must be required".into(),
            ));
        }
        Ok(())
    }

    fn holds(&self, row: &StabilityRow, c: Criterion) -> bool {
        match c {
            Criterion::Derivative => row
                .leaf_derivative
                .map(|v| v.abs() < self.derivative_max)
                .unwrap_or(false),
            Criterion::Movement => row.movement.map(|v| v < self.movement_max).unwrap_or(false),
            Criterion::Nmi => row.nmi_prev.map(|v| v >= self.nmi_min).unwrap_or(false),
            Criterion::Ari => row.ari_prev.map(|v| v >= self.ari_min).unwrap_or(false),
            Criterion::LowConfidence => row.low_conf_rate < self.low_conf_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionStatus {
    pub criterion: Criterion,
    /// Smallest size from which the criterion holds on every row.
    pub first_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Resolved run config, repeated here so the report reproduces alone.
    pub config: RunConfig,
    pub rows: Vec<StabilityRow>,
    pub stabilized_at: Option<usize>,
    pub fraction_of_full: Option<f64>,
    pub criteria: StabilizationCriteria,
    pub criteria_status: Vec<CriterionStatus>,
}

/// The per-size artifacts worth persisting alongside the report.
#[derive(Debug, Clone)]
pub struct SizeArtifacts<S> {
    pub size: usize,
    pub hierarchy: Hierarchy<S>,
    pub meta: RunMeta,
    pub prototypes: Prototypes,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<S> {
    pub report: StabilityReport,
    pub artifacts: Vec<SizeArtifacts<S>>,
}

/// Smallest size whose row, and every later row, satisfies all required
/// criteria. Momentary dips that later fail do not count.
pub fn detect_stabilization(
    rows: &[StabilityRow],
    criteria: &StabilizationCriteria,
) -> Option<usize> {
    first_persistent(rows, |row| criteria.require.iter().all(|&c| criteria.holds(row, c)))
}

fn first_persistent<F: Fn(&StabilityRow) -> bool>(
    rows: &[StabilityRow],
    pred: F,
) -> Option<usize> {
    let mut start = None;
    for row in rows.iter().rev() {
        if pred(row) {
            start = Some(row.size);
        } else {
            break;
        }
    }
    start
}

fn unwrap_or_warn<S: Scalar>(what: &str, r: Result<S>) -> f64 {
    match r {
        Ok(v) => v.as_f64(),
        Err(e) => {
            warn!("{what} unavailable for this size ({e}); reporting 0");
            0.0
        }
    }
}

struct PrevRun<S> {
    size: usize,
    leaf_count: usize,
    leaf_ids: Vec<usize>,
    centroids: Mat<S>,
    val_labels: Vec<usize>,
    protos: BTreeMap<usize, Vec<String>>,
}

/// Runs the whole sweep. The corpus is split once (training side sampled per
/// size, validation side constant); each size re-trains from scratch with the
/// same seed so rows are independent measurements. Steps whose balanced
/// availability clips them to an already-measured size are dropped with a
/// warning.
pub fn run_pipeline<S: Scalar>(
    corpus: &Corpus<S>,
    schedule: &SampleSchedule,
    cfg: &RunConfig,
    criteria: &StabilizationCriteria,
) -> Result<PipelineOutput<S>> {
    cfg.validate()?;
    criteria.validate()?;
    let seed = cfg.seed;
    let halves = split(corpus, cfg.split_ratio, seeds::derive(seed, seeds::SPLIT))?;
    if halves.validation.is_empty() {
        return Err(Error::InvalidInput(
            "validation side of the split is empty; lower split_ratio or grow the corpus".into(),
        ));
    }
    let counts = halves.train.category_counts();

    // clip each step to what the training split can actually supply
    let mut steps: Vec<(usize, usize)> = Vec::new();
    for &step in &schedule.per_category_steps {
        let total: usize = counts.values().map(|&c| c.min(step)).sum();
        match steps.last() {
            Some(&(_, prev)) if prev >= total => {
                warn!(
                    "schedule step {step} per category clips to {total} total, \
                     already covered; dropping it"
                );
            }
            _ => steps.push((step, total)),
        }
    }
    if steps.is_empty() {
        return Err(Error::InvalidInput("schedule left no usable sizes".into()));
    }

    let mut rows: Vec<StabilityRow> = Vec::with_capacity(steps.len());
    let mut artifacts: Vec<SizeArtifacts<S>> = Vec::with_capacity(steps.len());
    let mut prev: Option<PrevRun<S>> = None;

    for (step, expected_total) in steps {
        let timer = Instant::now();
        let sample = stratified_sample(&halves.train, step, seeds::derive(seed, seeds::SAMPLE))?;
        debug_assert_eq!(sample.len(), expected_total);
        let size = sample.len();

        let outcome = cluster_corpus(&sample, cfg)?;
        let hierarchy = &outcome.hierarchy;
        let leaf_ids = hierarchy.leaves();
        let leaf_count = leaf_ids.len();
        let node_count = hierarchy.node_count();

        let mut centroids = Mat::zeros(leaf_count, corpus.dim());
        for (slot, &leaf) in leaf_ids.iter().enumerate() {
            centroids.row_mut(slot).copy_from_slice(&hierarchy.node(leaf).centroid);
        }

        let assignments = assign_corpus(hierarchy, &outcome.params, &halves.validation)?;
        let val_labels: Vec<usize> = assignments.iter().map(|&(leaf, _)| leaf).collect();
        let low_conf_rate = low_confidence_rate(&assignments, S::of(cfg.confidence_delta))?
            .as_f64();

        let train_labels = hierarchy.leaf_labels()?;
        let silhouette = unwrap_or_warn(
            "silhouette",
            silhouette_sampled(
                &outcome.enhanced.e_prime,
                &train_labels,
                SILHOUETTE_SAMPLE_CAP,
                seeds::derive(seed, seeds::METRIC_SAMPLE),
            ),
        );
        let ch = unwrap_or_warn(
            "calinski-harabasz",
            calinski_harabasz(&outcome.enhanced.e_prime, &train_labels),
        );
        let db = unwrap_or_warn(
            "davies-bouldin",
            davies_bouldin(&outcome.enhanced.e_prime, &train_labels),
        );

        let sample_ids = sample.ids();
        let protos: BTreeMap<usize, Vec<String>> = outcome
            .prototypes
            .per_leaf
            .iter()
            .map(|(&leaf, rows)| {
                let named = rows.iter().map(|&r| sample_ids[r as usize].clone()).collect();
                (leaf, named)
            })
            .collect();

        let (leaf_derivative, movement, nmi_prev, ari_prev, proto_consistency_v) =
            if let Some(p) = &prev {
                let deriv =
                    (leaf_count as f64 - p.leaf_count as f64) / (size as f64 - p.size as f64);
                let scale = S::of(rms_row_norm(&outcome.enhanced.e_prime).as_f64().max(1e-12));
                let movement = centroid_movement(&p.centroids, &centroids, scale)?.as_f64();
                let nmi_v = nmi(&p.val_labels, &val_labels)?;
                let ari_v = ari(&p.val_labels, &val_labels)?;
                let matching: Vec<(usize, usize)> = greedy_match(&p.centroids, &centroids)
                    .into_iter()
                    .map(|(i, j)| (p.leaf_ids[i], leaf_ids[j]))
                    .collect();
                let proto_v = prototype_consistency(&p.protos, &protos, &matching)?;
                (Some(deriv), Some(movement), Some(nmi_v), Some(ari_v), Some(proto_v))
            } else {
                (None, None, None, None, None)
            };

        rows.push(StabilityRow {
            size,
            leaf_count,
            node_count,
            leaf_derivative,
            movement,
            nmi_prev,
            ari_prev,
            low_conf_rate,
            proto_consistency: proto_consistency_v,
            silhouette,
            ch,
            db,
            runtime_seconds: timer.elapsed().as_secs_f64(),
        });
        artifacts.push(SizeArtifacts {
            size,
            hierarchy: outcome.hierarchy.clone(),
            meta: RunMeta {
                n: size,
                d: corpus.dim(),
                seed,
                config: cfg.clone(),
            },
            prototypes: outcome.prototypes.clone(),
            ids: sample_ids,
        });
        prev = Some(PrevRun {
            size,
            leaf_count,
            leaf_ids,
            centroids,
            val_labels,
            protos,
        });
    }

    let stabilized_at = detect_stabilization(&rows, criteria);
    let last_size = rows.last().unwrap().size;
    let fraction_of_full = stabilized_at.map(|s| s as f64 / last_size as f64);
    let criteria_status = ALL_CRITERIA
        .iter()
        .map(|&c| CriterionStatus {
            criterion: c,
            first_size: first_persistent(&rows, |row| criteria.holds(row, c)),
        })
        .collect();

    Ok(PipelineOutput {
        report: StabilityReport {
            config: cfg.clone(),
            rows,
            stabilized_at,
            fraction_of_full,
            criteria: criteria.clone(),
            criteria_status,
        },
        artifacts,
    })
}

pub const CSV_HEADER: &str = "size,leaf_count,node_count,leaf_derivative,movement,nmi_prev,\
                              ari_prev,low_conf_rate,proto_consistency,silhouette,ch,db,\
                              runtime_seconds";

fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn csv_line(row: &StabilityRow) -> String {
    [
        row.size.to_string(),
        row.leaf_count.to_string(),
        row.node_count.to_string(),
        fmt_opt(row.leaf_derivative),
        fmt_opt(row.movement),
        fmt_opt(row.nmi_prev),
        fmt_opt(row.ari_prev),
        fmt_float(row.low_conf_rate),
        fmt_opt(row.proto_consistency),
        fmt_float(row.silhouette),
        fmt_float(row.ch),
        fmt_float(row.db),
        fmt_float(row.runtime_seconds),
    ]
    .join(",")
}

/// Writes stability.csv, report.json, and one hierarchy_<size>.json per
/// measured size. Returns the written paths.
pub fn emit_report<S: Scalar>(output: &PipelineOutput<S>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if output.report.rows.is_empty() {
        return Err(Error::InvalidInput("nothing to report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("stability.csv");
    let mut csv = String::with_capacity(256 * (output.report.rows.len() + 1));
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for row in &output.report.rows {
        csv.push_str(&csv_line(row));
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv)?;
    written.push(csv_path);

    let json_path = out_dir.join("report.json");
    let mut body = serde_json::to_vec_pretty(&output.report)
        .map_err(|e| Error::Internal(format!("report encoding failed: {e}")))?;
    body.push(b'\n');
    std::fs::write(&json_path, body)?;
    written.push(json_path);

    for artifact in &output.artifacts {
        let path = out_dir.join(format!("hierarchy_{}.json", artifact.size));
        save_hierarchy(
            &path,
            &artifact.hierarchy,
            &artifact.meta,
            Some((&artifact.prototypes, &artifact.ids)),
        )?;
        written.push(path);
    }
    Ok(written)
}
