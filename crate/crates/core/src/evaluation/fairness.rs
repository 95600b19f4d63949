use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{auc, EvalError};
use crate::catalog::{Attribute, Catalog, Dataset};
use crate::scoring::ScoreTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub attribute: Attribute,
    pub subgroup: String,
    /// Absent when the subgroup holds only one class of trial.
    pub auc: Option<f64>,
    pub genuine_n: u64,
    pub impostor_n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub condition: String,
    pub model: String,
    pub dataset: Option<Dataset>,
    pub overall: Option<f64>,
    /// Scored trials considered.
    pub total: u64,
    pub rows: Vec<SubgroupRow>,
    /// Trials left out per attribute because the enrollment identity's value is unknown.
    pub unknown: BTreeMap<Attribute, u64>,
}

impl FairnessReport {
    /// Trials with a known value of `attr`.
    pub fn annotated(&self, attr: Attribute) -> u64 {
        self.total - self.unknown.get(&attr).copied().unwrap_or(0)
    }
}

/// Subgroup AUCs keyed on the enrollment identity's soft-biometrics.
/// Only scored trials count; the table must cover a single dataset.
pub fn fairness_report(
    table: &ScoreTable,
    catalog: &Catalog,
    attributes: &[Attribute],
    condition: &str,
) -> Result<FairnessReport, EvalError> {
    let mut dataset: Option<Dataset> = None;
    let mut all = (Vec::new(), Vec::new());
    type Groups = BTreeMap<(Attribute, &'static str), (Vec<f64>, Vec<f64>)>;
    let mut groups: Groups = BTreeMap::new();
    let mut unknown: BTreeMap<Attribute, u64> = attributes.iter().map(|a| (*a, 0)).collect();
    for r in &table.rows {
        let Some(score) = r.score else { continue };
        let video =
            catalog.video(&r.enroll_video).ok_or_else(|| EvalError::UnknownVideo(r.enroll_video.to_string()))?;
        match dataset {
            None => dataset = Some(video.dataset),
            Some(d) if d != video.dataset => {
                return Err(EvalError::MixedDatasets(d.to_string(), video.dataset.to_string()));
            }
            _ => {}
        }
        let who = catalog.identity(&video.target).ok_or_else(|| EvalError::UnknownVideo(r.enroll_video.to_string()))?;
        let push = |pair: &mut (Vec<f64>, Vec<f64>)| {
            if r.label.is_genuine() {
                pair.0.push(score)
            } else {
                pair.1.push(score)
            }
        };
        push(&mut all);
        for &attr in attributes {
            match who.attribute(attr) {
                Some(v) => push(groups.entry((attr, v)).or_default()),
                None => *unknown.entry(attr).or_default() += 1,
            }
        }
    }
    let rows = groups
        .into_iter()
        .map(|((attribute, v), (g, i))| SubgroupRow {
            attribute,
            subgroup: v.to_string(),
            auc: auc(&g, &i).ok(),
            genuine_n: g.len() as u64,
            impostor_n: i.len() as u64,
        })
        .collect();
    Ok(FairnessReport {
        condition: condition.to_string(),
        model: table.model.clone(),
        dataset,
        overall: auc(&all.0, &all.1).ok(),
        total: (all.0.len() + all.1.len()) as u64,
        rows,
        unknown,
    })
}
