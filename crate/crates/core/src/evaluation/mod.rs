//! Exact AUC, ROC points, delta tables and fairness breakdowns.

mod delta;
mod fairness;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::ScoreTable;

pub use delta::{delta_table, format_auc, format_delta, tenths, DeltaRow, DeltaTable};
pub use fairness::{fairness_report, FairnessReport, SubgroupRow};
pub use render::{
    fairness_csv, fairness_text, render_delta_grid, render_report, reports_csv, reports_text, roc_csv, RenderedReport,
    ABSENT, FAIRNESS_HEADER, REPORT_HEADER,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no genuine scores")]
    NoGenuine,
    #[error("no impostor scores")]
    NoImpostor,
    #[error("score {0} is not a number")]
    NotANumber(f64),
    #[error("reference {condition} / {model} not among the reports")]
    MissingReference { condition: String, model: String },
    #[error("score table mixes datasets {0} and {1}; fairness is computed per dataset")]
    MixedDatasets(String, String),
    #[error("trial references unknown video {0}")]
    UnknownVideo(String),
    #[error("nothing to render")]
    Empty,
}

fn check(scores: &[f64]) -> Result<(), EvalError> {
    match scores.iter().find(|s| s.is_nan()) {
        Some(s) => Err(EvalError::NotANumber(*s)),
        None => Ok(()),
    }
}

/// Exact Mann-Whitney AUC in percent: the fraction of (genuine, impostor)
/// pairs where the genuine score is higher, ties counting one half.
/// Pair counts are accumulated as integers, so the only rounding is the
/// final division.
pub fn auc(genuine: &[f64], impostor: &[f64]) -> Result<f64, EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::NoGenuine);
    }
    if impostor.is_empty() {
        return Err(EvalError::NoImpostor);
    }
    check(genuine)?;
    check(impostor)?;
    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    // The searches use IEEE comparison, so -0.0 and 0.0 tie.
    let mut wins: u128 = 0;
    let mut ties: u128 = 0;
    for g in genuine {
        let below = imp.partition_point(|i| i < g);
        let not_above = imp.partition_point(|i| i <= g);
        wins += below as u128;
        ties += (not_above - below) as u128;
    }
    let pairs = genuine.len() as u128 * impostor.len() as u128;
    Ok((2 * wins + ties) as f64 / (2 * pairs) as f64 * 100.0)
}

/// ROC operating points `(fpr, tpr)` from the strictest threshold down,
/// starting at (0, 0) and ending at (1, 1). Tied scores form one step.
pub fn roc(genuine: &[f64], impostor: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if genuine.is_empty() {
        return Err(EvalError::NoGenuine);
    }
    if impostor.is_empty() {
        return Err(EvalError::NoImpostor);
    }
    check(genuine)?;
    check(impostor)?;
    let mut all: Vec<(f64, bool)> =
        genuine.iter().map(|s| (*s, true)).chain(impostor.iter().map(|s| (*s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (ng, ni) = (genuine.len() as f64, impostor.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1
            } else {
                fp += 1
            }
            i += 1;
        }
        points.push((fp as f64 / ni, tp as f64 / ng));
    }
    Ok(points)
}

/// AUC of one condition and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub model: String,
    pub auc: f64,
    pub genuine_n: u64,
    pub impostor_n: u64,
}

/// Scores a table; unscorable trials are left out of the counts.
pub fn evaluate(table: &ScoreTable, condition: &str) -> Result<EvalReport, EvalError> {
    let (g, i) = table.by_label();
    Ok(EvalReport {
        condition: condition.to_string(),
        model: table.model.clone(),
        auc: auc(&g, &i)?,
        genuine_n: g.len() as u64,
        impostor_n: i.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 100.0);
        assert_eq!(auc(&[0.8, 0.2], &[0.5]).unwrap(), 50.0);
        assert_eq!(auc(&[0.5], &[0.5]).unwrap(), 50.0);
        assert_eq!(auc(&[0.0], &[-0.0]).unwrap(), 50.0);
        assert_eq!(auc(&[], &[0.5]), Err(EvalError::NoGenuine));
        assert_eq!(auc(&[0.5], &[]), Err(EvalError::NoImpostor));
        assert!(matches!(auc(&[f64::NAN], &[0.5]), Err(EvalError::NotANumber(_))));
    }

    #[test]
    fn roc_endpoints_and_ties() {
        let r = roc(&[0.9, 0.5], &[0.5, 0.1]).unwrap();
        assert_eq!(r, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn trapezoid_area_matches_auc() {
        let g = [0.3, 0.9, 0.5, 0.5, 0.7];
        let i = [0.1, 0.5, 0.6, 0.2];
        let r = roc(&g, &i).unwrap();
        let area: f64 = r.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area * 100.0 - auc(&g, &i).unwrap()).abs() < 1e-12);
    }
}
