//! Benchmark protocol: identity-disjoint splits, exhaustive trial lists and
//! experiment matrices.

mod experiment;
mod split;
mod trials;

use std::path::Path;

use thiserror::Error;

use crate::catalog::{Catalog, Dataset, IdentityId, VideoId};

pub use experiment::{experiment_matrix, EvalSet, ExperimentSpec, Job, RunPlan, Scenario, TrainGenerator, TrainSet};
pub use split::{make_split, CellImbalance, Side, Split, SplitOutcome, SplitSizing};
pub use trials::{
    generate_trials, label_for, read_trials, verify_labels, write_trials, Convention, Label, Trial, TrialCounts,
    TrialList, TRIALS_HEADER,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{dataset} has {found} identities; a split needs at least 2")]
    TooFewIdentities { dataset: Dataset, found: usize },
    #[error("invalid split sizing: {0}")]
    Sizing(String),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

impl ProtocolError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ProtocolError::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        let line = e.position().map(|p| format!("line {}: ", p.line())).unwrap_or_default();
        ProtocolError::Format { path: path.display().to_string(), reason: format!("{line}{e}") }
    }
}

/// Development videos of one training set, each labelled by its driver.
pub fn training_videos(catalog: &Catalog, split: &Split, train: TrainSet) -> Vec<(VideoId, IdentityId)> {
    catalog
        .videos()
        .iter()
        .filter(|v| {
            v.dataset == train.dataset
                && train.generator.includes(v.generator)
                && split.video_side(v) == Some(Side::Development)
        })
        .map(|v| (v.video_id.clone(), v.driver.clone()))
        .collect()
}
