use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{score_pair_cached, EmbeddingCache, ScoringError, WindowEmbedder};
use crate::catalog::VideoId;
use crate::feature_store::FeatureStore;
use crate::protocol::{Label, Trial};

/// One scored trial. `score` is `None` when either video is shorter than a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub trial_id: u64,
    pub enroll_video: VideoId,
    pub test_video: VideoId,
    pub label: Label,
    pub model: String,
    pub score: Option<f64>,
    /// Per-member scores of a fused row, in member order.
    #[serde(skip)]
    pub sub_scores: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub model: String,
    pub rows: Vec<ScoreRow>,
    /// Trials whose videos had no features; not scored.
    pub missing: Vec<VideoId>,
}

impl ScoreTable {
    pub fn unscorable(&self) -> impl Iterator<Item = &ScoreRow> {
        self.rows.iter().filter(|r| r.score.is_none())
    }

    /// Scores split by label, unscorable rows dropped.
    pub fn by_label(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = Vec::new();
        let mut i = Vec::new();
        for r in &self.rows {
            if let Some(s) = r.score {
                if r.label.is_genuine() {
                    g.push(s)
                } else {
                    i.push(s)
                }
            }
        }
        (g, i)
    }
}

/// Scores every trial with one embedder. Window embeddings are computed
/// once per video (in parallel), then trials are scored in parallel and
/// returned in input order. Trials referencing videos without features are
/// left out and their videos listed in `missing`.
pub fn score_trials(
    embedder: &dyn WindowEmbedder,
    store: &FeatureStore,
    trials: &[Trial],
    f: usize,
    cache: &EmbeddingCache,
) -> Result<ScoreTable, ScoringError> {
    let videos: BTreeSet<VideoId> = trials.iter().flat_map(|t| [t.enroll.clone(), t.test.clone()]).collect();
    let missing = cache.warm(embedder, store, &videos, f)?;
    let missing_set: BTreeSet<&VideoId> = missing.iter().collect();
    let rows = trials
        .par_iter()
        .filter(|t| !missing_set.contains(&t.enroll) && !missing_set.contains(&t.test))
        .map(|t| {
            let score = match score_pair_cached(cache, embedder, store, &t.enroll, &t.test, f) {
                Ok(s) => Some(s),
                Err(ScoringError::Unscorable(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ScoreRow {
                trial_id: t.trial_id,
                enroll_video: t.enroll.clone(),
                test_video: t.test.clone(),
                label: t.label,
                model: embedder.model_id().to_string(),
                score,
                sub_scores: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreTable { model: embedder.model_id().to_string(), rows, missing })
}

/// Arithmetic mean of per-model scores of one trial.
pub fn fuse(scores: &[ScoreRow], model: &str) -> Result<ScoreRow, ScoringError> {
    let first = scores.first().ok_or(ScoringError::EmptyFusion)?;
    if let Some(other) = scores.iter().find(|s| s.trial_id != first.trial_id) {
        return Err(ScoringError::MixedTrials(first.trial_id, other.trial_id));
    }
    let subs: Option<Vec<f64>> = scores.iter().map(|s| s.score).collect();
    let score = subs.as_ref().map(|v| v.iter().sum::<f64>() / v.len() as f64);
    Ok(ScoreRow { model: model.to_string(), score, sub_scores: subs.unwrap_or_default(), ..first.clone() })
}

/// Fuses aligned tables row by row. With `zscore`, each table's scores are
/// first standardized by its own mean and standard deviation.
pub fn fuse_tables(tables: &[ScoreTable], model: &str, zscore: bool) -> Result<ScoreTable, ScoringError> {
    let first = tables.first().ok_or(ScoringError::EmptyFusion)?;
    for t in tables {
        if t.rows.len() != first.rows.len() || t.rows.iter().zip(&first.rows).any(|(a, b)| a.trial_id != b.trial_id) {
            return Err(ScoringError::TableMismatch(format!("{} and {} cover different trials", first.model, t.model)));
        }
    }
    let adjusted: Vec<ScoreTable> = if zscore {
        tables
            .iter()
            .map(|t| {
                let vals: Vec<f64> = t.rows.iter().filter_map(|r| r.score).collect();
                let n = vals.len().max(1) as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                let sd = if sd > 0.0 { sd } else { 1.0 };
                let rows =
                    t.rows.iter().map(|r| ScoreRow { score: r.score.map(|s| (s - mean) / sd), ..r.clone() }).collect();
                ScoreTable { rows, ..t.clone() }
            })
            .collect()
    } else {
        tables.to_vec()
    };
    let rows = (0..first.rows.len())
        .map(|i| {
            let members: Vec<ScoreRow> = adjusted.iter().map(|t| t.rows[i].clone()).collect();
            fuse(&members, model)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let missing: BTreeSet<VideoId> = tables.iter().flat_map(|t| t.missing.iter().cloned()).collect();
    Ok(ScoreTable { model: model.to_string(), rows, missing: missing.into_iter().collect() })
}

pub const SCORES_HEADER: [&str; 6] = ["trial_id", "enroll_video", "test_video", "label", "model", "score"];

/// Writes `trial_id,enroll_video,test_video,label,model,score`; unscorable
/// trials have an empty score field. Scores use the shortest representation
/// that parses back to the same `f64`.
pub fn write_scores(table: &ScoreTable, path: &Path) -> Result<(), ScoringError> {
    let io = |e: std::io::Error| ScoringError::Io { path: path.display().to_string(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SCORES_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &table.rows {
        w.write_record([
            r.trial_id.to_string(),
            r.enroll_video.to_string(),
            r.test_video.to_string(),
            r.label.as_u8().to_string(),
            r.model.clone(),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io)
}

fn csv_err(path: &Path, e: csv::Error) -> ScoringError {
    let line = e.position().map(|p| format!("line {}: ", p.line())).unwrap_or_default();
    ScoringError::Format { path: path.display().to_string(), reason: format!("{line}{e}") }
}

pub fn read_scores(path: &Path) -> Result<ScoreTable, ScoringError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(SCORES_HEADER) {
        return Err(ScoringError::Format {
            path: path.display().to_string(),
            reason: format!("header must be {}", SCORES_HEADER.join(",")),
        });
    }
    let rows: Vec<ScoreRow> = r.deserialize().collect::<Result<_, _>>().map_err(|e| csv_err(path, e))?;
    let model = rows.first().map(|r| r.model.clone()).unwrap_or_default();
    Ok(ScoreTable { model, rows, missing: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: u64, score: Option<f64>) -> ScoreRow {
        ScoreRow {
            trial_id: id,
            enroll_video: "e".into(),
            test_video: "t".into(),
            label: Label::Genuine,
            model: "m".into(),
            score,
            sub_scores: vec![],
        }
    }

    #[test]
    fn fuse_examples() {
        let f = fuse(&[row(1, Some(0.2)), row(1, Some(0.6))], "fused").unwrap();
        assert!((f.score.unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(f.sub_scores, vec![0.2, 0.6]);
        assert_eq!(fuse(&[row(1, Some(0.37))], "x").unwrap().score, Some(0.37));
        assert_eq!(fuse(&[row(1, Some(1.0)), row(1, Some(-1.0))], "x").unwrap().score, Some(0.0));
        assert!(matches!(fuse(&[], "x"), Err(ScoringError::EmptyFusion)));
        assert!(matches!(fuse(&[row(1, Some(0.1)), row(2, Some(0.1))], "x"), Err(ScoringError::MixedTrials(1, 2))));
        assert_eq!(fuse(&[row(1, None), row(1, Some(0.1))], "x").unwrap().score, None);
    }

    #[test]
    fn zscore_fusion_standardizes_each_member() {
        let a = ScoreTable { model: "a".into(), rows: vec![row(0, Some(0.0)), row(1, Some(1.0))], missing: vec![] };
        let b = ScoreTable { model: "b".into(), rows: vec![row(0, Some(10.0)), row(1, Some(30.0))], missing: vec![] };
        let f = fuse_tables(&[a.clone(), b.clone()], "f", true).unwrap();
        assert_eq!(f.rows[0].score, Some(-1.0));
        assert_eq!(f.rows[1].score, Some(1.0));
        let raw = fuse_tables(&[a, b], "f", false).unwrap();
        assert_eq!(raw.rows[1].score, Some(15.5));
    }

    #[test]
    fn csv_round_trip_with_unscorable() {
        let t = ScoreTable {
            model: "m".into(),
            rows: vec![row(0, Some(0.1 + 0.2)), row(1, None), row(2, Some(-1.0 / 3.0))],
            missing: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scores(&t, &p).unwrap();
        assert_eq!(read_scores(&p).unwrap(), t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\n1,e,t,1,m,\n"));
    }
}
