//! `hic`: cluster embedding corpora into intent hierarchies from the shell.
//!
//! One process, one command, no daemon state. Subcommands: `synth` generates
//! benchmark corpora, `cluster` runs the full pipeline on one corpus,
//! `stability` sweeps sample sizes for the stabilization report, `assign`
//! routes utterances through a saved run, `metrics` compares two partition
//! files. Config resolves as flags over config file over defaults; every
//! random choice derives from the single `--seed`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cfg;
mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "hic",
    version,
    about = "Hierarchical intent clustering over embedding corpora"
)]
struct Cli {
    /// Config file with one `key = value` pair per line (`#` comments).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output path: a file for synth/cluster/assign, a directory for
    /// stability. assign prints to stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    #[command(flatten)]
    overrides: cfg::Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic hierarchical Gaussian-mixture corpus.
    Synth(commands::SynthArgs),
    /// Train, cluster, and write a hierarchy, checkpoint, and summary.
    Cluster(commands::ClusterArgs),
    /// Sweep stratified sample sizes and report where the tree stabilizes.
    Stability(commands::StabilityArgs),
    /// Assign utterances to the leaves of a saved hierarchy.
    Assign(commands::AssignArgs),
    /// Compare two partition files; prints their agreement scores.
    Metrics(commands::MetricsArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cfg::resolve(cli.config.as_deref(), &cli.overrides)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Synth(args) => commands::synth(&args, &cfg, out),
        Command::Cluster(args) => commands::cluster(&args, &cfg, out),
        Command::Stability(args) => commands::stability(&args, &cfg, out),
        Command::Assign(args) => commands::assign(&args, out),
        Command::Metrics(args) => commands::metrics(&args),
    }
}

/// 1 = bad input, 2 = config violation, 3 = internal invariant failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hic_core::Error>() {
        Some(hic_core::Error::InvalidConfig(_)) => 2,
        Some(hic_core::Error::Internal(_)) => 3,
        _ => 1,
    }
}
