//! The five subcommands. All numeric work runs in f64.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;

use hic_core::attention::{load_checkpoint, save_checkpoint, CheckpointMeta};
use hic_core::config::seeds;
use hic_core::corpus::{
    generate_synthetic, load_corpus, save_corpus, Corpus, CorpusFormat, SampleSchedule, SynthSpec,
};
use hic_core::engine::{assign_corpus, cluster_corpus, ClusterOutcome};
use hic_core::hierarchy::{load_hierarchy, save_hierarchy, RunMeta};
use hic_core::metrics::{ari, calinski_harabasz, davies_bouldin, low_confidence_rate, nmi,
    silhouette_sampled};
use hic_core::stability::{
    emit_report, run_pipeline, Criterion, StabilizationCriteria, SILHOUETTE_SAMPLE_CAP,
};
use hic_core::{Error, RunConfig};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Children per level, comma separated; 3,4 means two levels, 12 leaves.
    #[arg(long, value_delimiter = ',', required = true)]
    pub branching: Vec<usize>,
    /// Embedding dimension.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub points_per_leaf: usize,
    /// Centroid separation in within-leaf sigma units.
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    /// jsonl | binary; defaults by extension (.jsonl is JSONL, else binary).
    #[arg(long, value_parser = parse_format)]
    pub format: Option<CorpusFormat>,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Corpus file, JSONL or binary; the format is detected by content.
    pub input: PathBuf,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    /// Corpus file, JSONL or binary; the format is detected by content.
    pub input: PathBuf,
    /// Per-category sample steps, comma separated and strictly ascending.
    /// Defaults to about six even steps, or a coarse preset above 30000 rows.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    /// Criteria that must hold simultaneously:
    /// derivative, movement, nmi, ari, low-confidence.
    #[arg(long, value_delimiter = ',', value_parser = parse_criterion)]
    pub require: Option<Vec<Criterion>>,
    /// Leaf-count derivative magnitude must stay below this.
    #[arg(long)]
    pub derivative_max: Option<f64>,
    /// Matched-centroid movement (fraction of data scale) must stay below this.
    #[arg(long)]
    pub movement_max: Option<f64>,
    /// Leaf agreement with the previous size must stay at or above this.
    #[arg(long)]
    pub nmi_min: Option<f64>,
    #[arg(long)]
    pub ari_min: Option<f64>,
    /// Low-confidence assignment rate must stay below this.
    #[arg(long)]
    pub low_conf_max: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AssignArgs {
    /// Hierarchy JSON produced by `hic cluster`.
    pub hierarchy: PathBuf,
    /// Corpus of utterances to route.
    pub input: PathBuf,
    /// Parameter checkpoint; defaults to the hierarchy path with the
    /// extension replaced by params.bin.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Partition files: assignment JSONL (id + leaf) or corpus JSONL
    /// (id + category).
    pub a: PathBuf,
    pub b: PathBuf,
}

pub fn synth(args: &SynthArgs, cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let spec = SynthSpec {
        levels: args.branching.len(),
        branching: args.branching.clone(),
        dim: args.dim,
        points_per_leaf: args.points_per_leaf,
        separation: args.separation,
        seed: seeds::derive(cfg.seed, seeds::SYNTH),
    };
    let (corpus, _truth) = generate_synthetic::<f64>(&spec)?;
    let format = args.format.unwrap_or_else(|| format_for(out));
    save_corpus(&corpus, out, format)?;
    let sidecar = out.with_extension("synth.json");
    let doc = serde_json::json!({
        "seed": cfg.seed,
        "spec": {
            "levels": spec.levels,
            "branching": spec.branching,
            "dim": spec.dim,
            "points-per-leaf": spec.points_per_leaf,
            "separation": spec.separation,
            "derived-seed": spec.seed,
        },
    });
    fs::write(&sidecar, format!("{doc:#}\n"))?;
    let leaves: usize = spec.branching.iter().product();
    println!(
        "wrote {} utterances ({} leaves, dim {}) to {}",
        corpus.len(),
        leaves,
        corpus.dim(),
        out.display()
    );
    Ok(())
}

pub fn cluster(args: &ClusterArgs, cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let corpus = load_input(&args.input)?;
    let outcome = cluster_corpus(&corpus, cfg)?;

    let ids: Vec<String> = corpus.utterances().iter().map(|u| u.id.clone()).collect();
    let meta = RunMeta {
        n: corpus.len(),
        d: corpus.dim(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    save_hierarchy(out, &outcome.hierarchy, &meta, Some((&outcome.prototypes, &ids)))?;
    save_checkpoint(
        &out.with_extension("params.bin"),
        &outcome.params,
        CheckpointMeta {
            seed: cfg.seed,
            epoch: (cfg.epochs_pretrain + cfg.epochs_dec) as u64,
        },
    )?;
    fs::write(out.with_extension("summary.txt"), summarize(&corpus, &outcome, cfg)?)?;

    println!(
        "wrote hierarchy ({} leaves, {} nodes) to {}",
        outcome.hierarchy.leaf_count(),
        outcome.hierarchy.node_count(),
        out.display()
    );
    Ok(())
}

pub fn stability(args: &StabilityArgs, cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let out = require_out(out)?;
    let corpus = load_input(&args.input)?;
    let schedule = match &args.steps {
        Some(steps) => SampleSchedule::from_steps(&corpus, steps)?,
        None => SampleSchedule::auto(&corpus)?,
    };
    let mut criteria = StabilizationCriteria::default();
    if let Some(r) = &args.require {
        criteria.require = r.clone();
    }
    if let Some(v) = args.derivative_max {
        criteria.derivative_max = v;
    }
    if let Some(v) = args.movement_max {
        criteria.movement_max = v;
    }
    if let Some(v) = args.nmi_min {
        criteria.nmi_min = v;
    }
    if let Some(v) = args.ari_min {
        criteria.ari_min = v;
    }
    if let Some(v) = args.low_conf_max {
        criteria.low_conf_max = v;
    }

    let output = run_pipeline(&corpus, &schedule, cfg, &criteria)?;
    let written = emit_report(&output, out)?;
    match (output.report.stabilized_at, output.report.fraction_of_full) {
        (Some(size), Some(frac)) => println!("stabilized_at={size} fraction={frac:.3}"),
        _ => println!("stabilized_at=none"),
    }
    println!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

pub fn assign(args: &AssignArgs, out: Option<&Path>) -> anyhow::Result<()> {
    let (hierarchy, meta, _protos) = load_hierarchy::<f64>(&args.hierarchy)?;
    let params_path = args
        .params
        .clone()
        .unwrap_or_else(|| args.hierarchy.with_extension("params.bin"));
    let (params, _ckpt) = load_checkpoint::<f64>(&params_path)
        .with_context(|| format!("loading checkpoint {}", params_path.display()))?;
    let corpus = load_input(&args.input)?;

    let rows = assign_corpus(&hierarchy, &params, &corpus)?;
    let mut buf = String::new();
    // Reproducibility header: the same meta block the hierarchy carries.
    buf.push_str(&serde_json::to_string(&serde_json::json!({ "meta": meta }))?);
    buf.push('\n');
    for (u, (leaf, confidence)) in corpus.utterances().iter().zip(&rows) {
        buf.push_str(&serde_json::to_string(&serde_json::json!({
            "id": u.id,
            "leaf": leaf,
            "confidence": confidence,
        }))?);
        buf.push('\n');
    }
    match out {
        Some(path) => {
            fs::write(path, &buf)?;
            println!("wrote {} assignments to {}", rows.len(), path.display());
        }
        None => print!("{buf}"),
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> anyhow::Result<()> {
    let a = load_partition(&args.a)?;
    let b = load_partition(&args.b)?;
    let (u, v) = align(&a, &b)?;
    println!("nmi={:?} ari={:?}", nmi(&u, &v)?, ari(&u, &v)?);
    Ok(())
}

/// One `key=value` line per fact; floats as `{:.6}` so the page stays short.
fn summarize(
    corpus: &Corpus<f64>,
    outcome: &ClusterOutcome<f64>,
    cfg: &RunConfig,
) -> anyhow::Result<String> {
    let h = &outcome.hierarchy;
    let labels = h.leaf_labels()?;
    let cats = category_ints(corpus);
    let ep = &outcome.enhanced.e_prime;
    let st = &outcome.merge_stats;

    let mut s = String::new();
    writeln!(s, "utterances={}", corpus.len())?;
    writeln!(s, "dim={}", corpus.dim())?;
    writeln!(s, "seed={}", cfg.seed)?;
    writeln!(s, "leaves={}", h.leaf_count())?;
    writeln!(s, "nodes={}", h.node_count())?;
    writeln!(s, "roots={}", h.roots().len())?;
    writeln!(s, "clusters_initial={}", outcome.k)?;
    writeln!(s, "merges={}", st.merges)?;
    writeln!(s, "splits={}", st.splits)?;
    writeln!(s, "rejections={}", st.rejections)?;
    writeln!(s, "tau0={:.6}", st.tau0)?;
    writeln!(s, "tau_final={:.6}", st.tau_final)?;
    writeln!(s, "pretrain_loss={:.6}", outcome.pretrain.final_loss)?;
    writeln!(s, "finetune_loss={:.6}", outcome.finetune.final_loss)?;

    let metric_seed = seeds::derive(cfg.seed, seeds::METRIC_SAMPLE);
    let sil = silhouette_sampled(ep, &labels, SILHOUETTE_SAMPLE_CAP, metric_seed);
    writeln!(s, "silhouette={}", metric_str(sil))?;
    writeln!(s, "calinski_harabasz={}", metric_str(calinski_harabasz(ep, &labels)))?;
    writeln!(s, "davies_bouldin={}", metric_str(davies_bouldin(ep, &labels)))?;
    writeln!(s, "category_nmi={}", metric_str(nmi(&labels, &cats)))?;
    writeln!(s, "category_ari={}", metric_str(ari(&labels, &cats)))?;

    let assignments = assign_corpus(h, &outcome.params, corpus)?;
    let low = low_confidence_rate(&assignments, cfg.confidence_delta)?;
    writeln!(s, "low_confidence_rate={low:.6}")?;

    // Resolved config, flat, so the summary alone reproduces the run.
    if let serde_json::Value::Object(map) = serde_json::to_value(cfg)? {
        for (key, value) in map {
            let value = match value {
                serde_json::Value::String(text) => text,
                other => other.to_string(),
            };
            writeln!(s, "config.{key}={value}")?;
        }
    }
    Ok(s)
}

fn metric_str(value: hic_core::Result<f64>) -> String {
    match value {
        Ok(v) => format!("{v:.6}"),
        Err(e) => {
            log::warn!("summary metric failed: {e}");
            "n/a".into()
        }
    }
}

fn category_ints(corpus: &Corpus<f64>) -> Vec<usize> {
    let mut next = 0usize;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    corpus
        .utterances()
        .iter()
        .map(|u| {
            *seen.entry(u.category.as_str()).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            })
        })
        .collect()
}

fn require_out(out: Option<&Path>) -> anyhow::Result<&Path> {
    out.ok_or_else(|| Error::InvalidConfig("this command needs --out".into()).into())
}

fn load_input(path: &Path) -> anyhow::Result<Corpus<f64>> {
    let format = sniff_format(path)?;
    Ok(load_corpus(path, format).with_context(|| format!("loading {}", path.display()))?)
}

/// Binary corpora begin with a fixed magic; anything else is treated as JSONL.
fn sniff_format(path: &Path) -> anyhow::Result<CorpusFormat> {
    let mut head = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut head)?;
    Ok(if n == 4 && &head == hic_core::corpus::BINARY_MAGIC {
        CorpusFormat::Binary
    } else {
        CorpusFormat::Jsonl
    })
}

fn format_for(path: &Path) -> CorpusFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => CorpusFormat::Jsonl,
        _ => CorpusFormat::Binary,
    }
}

fn parse_format(s: &str) -> std::result::Result<CorpusFormat, String> {
    match s {
        "jsonl" => Ok(CorpusFormat::Jsonl),
        "binary" => Ok(CorpusFormat::Binary),
        _ => Err(format!("unknown corpus format {s:?} (expected jsonl or binary)")),
    }
}

fn parse_criterion(s: &str) -> std::result::Result<Criterion, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        format!(
            "unknown criterion {s:?} (expected derivative, movement, nmi, ari, or low-confidence)"
        )
    })
}

/// Reads a partition file: JSONL whose records carry an id plus either a
/// numeric `leaf` (assignment output) or a string `category` (corpus file).
/// Lines holding only a `meta` object are skipped.
fn load_partition(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Malformed {
            index,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Malformed {
            index,
            message: "expected a JSON object".into(),
        })?;
        if obj.contains_key("meta") {
            continue;
        }
        let id = obj
            .get("id")
            .and_then(|x| x.as_str())
            .ok_or_else(|| Error::Malformed {
                index,
                message: "record has no string id".into(),
            })?;
        let label = match (obj.get("leaf"), obj.get("category")) {
            (Some(leaf), _) if leaf.is_u64() => leaf.to_string(),
            (_, Some(serde_json::Value::String(cat))) => cat.clone(),
            _ => {
                return Err(Error::Malformed {
                    index,
                    message: "record has neither a numeric leaf nor a string category".into(),
                }
                .into())
            }
        };
        if labels.insert(id.to_string(), label).is_some() {
            return Err(Error::DuplicateId {
                index,
                id: id.into(),
            }
            .into());
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    Ok(labels)
}

fn align(
    a: &BTreeMap<String, String>,
    b: &BTreeMap<String, String>,
) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    if a.len() != b.len() || !a.keys().eq(b.keys()) {
        return Err(Error::InvalidInput("partition files cover different id sets".into()).into());
    }
    fn dense(values: impl Iterator<Item = impl AsRef<str>>) -> Vec<usize> {
        let mut ids: BTreeMap<String, usize> = BTreeMap::new();
        values
            .map(|v| {
                let next = ids.len();
                *ids.entry(v.as_ref().to_string()).or_insert(next)
            })
            .collect()
    }
    Ok((dense(a.values()), dense(b.values())))
}
