//! `avfp`: command-line front end for the avatar fingerprinting benchmark.
//!
//! Exit status: 0 on success, 1 when a check fails (count validation,
//! failed jobs), 2 on errors such as unreadable inputs or bad configs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use avfp_core::catalog::{Attribute, Dataset};
use avfp_core::feature_store::FeatureKind;
use avfp_core::protocol::{Convention, TrainGenerator};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avfp", version, about = "Avatar fingerprinting verification benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Manifest {
    /// identities.csv
    #[arg(long)]
    identities: PathBuf,
    /// videos.csv
    #[arg(long)]
    videos: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check manifest counts against the published database statistics.
    Validate {
        #[command(flatten)]
        manifest: Manifest,
        /// Also check the development and evaluation sides of this split.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Write a synthetic corpus, or the canonical layout (manifests and split only).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Corpus parameters as TOML; flags below are ignored when given.
        #[arg(long, conflicts_with = "canonical")]
        config: Option<PathBuf>,
        #[arg(long)]
        canonical: bool,
        #[arg(long, default_value_t = 20)]
        n_identities: usize,
        #[arg(long, default_value_t = 10)]
        videos_per_id: usize,
        #[arg(long, default_value_t = 64)]
        min_frames: usize,
        #[arg(long, default_value_t = 100)]
        max_frames: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a feature store from per-video CSV files (video id = file stem).
    Import {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "embedding")]
        kind: FeatureKind,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Draw or load a split and write the verification trials.
    Trials {
        #[command(flatten)]
        manifest: Manifest,
        #[arg(long)]
        out: PathBuf,
        /// Use this split instead of drawing one.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Fraction of each dataset's identities held out for evaluation.
        #[arg(long, default_value_t = 0.3, conflicts_with = "canonical_sizes")]
        eval_fraction: f64,
        /// Hold out the published 24 CREMA-D and 8 RAVDESS identities.
        #[arg(long)]
        canonical_sizes: bool,
        #[arg(long, default_value = "exclude_identical")]
        convention: Convention,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an embedder on the development side of a split.
    Train {
        #[command(flatten)]
        manifest: Manifest,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        dataset: Dataset,
        /// A generator, or "all".
        #[arg(long)]
        generator: TrainGenerator,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        window: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score trials with a trained embedder.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model name written to the score table.
        #[arg(long, default_value = "model")]
        name: String,
        /// Window length; the model's training window by default.
        #[arg(long)]
        window: Option<usize>,
    },
    /// AUC of one or more score tables.
    Evaluate {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        /// Condition labels, one per table; file stems by default.
        #[arg(long, value_delimiter = ',')]
        condition: Vec<String>,
        /// Write report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write one fpr,tpr file per table into this directory.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Subgroup AUCs keyed on the enrollment identity's soft-biometrics.
    Fairness {
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        manifest: Manifest,
        #[arg(long, value_delimiter = ',', default_values = ["gender", "ethnicity", "age_range"])]
        attributes: Vec<Attribute>,
        #[arg(long)]
        condition: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute an experiment matrix from a config file.
    Run {
        config: PathBuf,
        #[arg(long, env = "AVFP_WORKERS")]
        workers: Option<usize>,
        #[arg(long)]
        run_id: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Outcome of a command that completed without error.
pub enum Outcome {
    Ok,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes already spelled out by the layer above.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}
