use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::catalog::{Attribute, AvatarVideo, Catalog, Dataset, IdentityId};
use crate::seed;

/// Identity-disjoint development / evaluation partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub development: BTreeSet<IdentityId>,
    pub evaluation: BTreeSet<IdentityId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Development,
    Evaluation,
}

impl Split {
    pub fn side(&self, id: &IdentityId) -> Option<Side> {
        if self.evaluation.contains(id) {
            Some(Side::Evaluation)
        } else if self.development.contains(id) {
            Some(Side::Development)
        } else {
            None
        }
    }

    /// Side of a video: only defined when driver and target share a side.
    pub fn video_side(&self, v: &AvatarVideo) -> Option<Side> {
        let d = self.side(&v.driver)?;
        (self.side(&v.target)? == d).then_some(d)
    }

    pub fn ids(&self, side: Side) -> &BTreeSet<IdentityId> {
        match side {
            Side::Development => &self.development,
            Side::Evaluation => &self.evaluation,
        }
    }

    /// Checks disjointness and that the split covers exactly the catalog identities.
    pub fn check(&self, catalog: &Catalog) -> Result<(), ProtocolError> {
        if let Some(id) = self.development.intersection(&self.evaluation).next() {
            return Err(ProtocolError::Split(format!("identity {id} is on both sides")));
        }
        let known: BTreeSet<&IdentityId> = catalog.identities().map(|r| &r.id).collect();
        for id in self.development.iter().chain(&self.evaluation) {
            if !known.contains(id) {
                return Err(ProtocolError::Split(format!("identity {id} is not in the catalog")));
            }
        }
        if let Some(id) = known.iter().find(|id| self.side(id).is_none()) {
            return Err(ProtocolError::Split(format!("identity {id} is on neither side")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ProtocolError> {
        let mut text = serde_json::to_string_pretty(self).expect("split serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| ProtocolError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ProtocolError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProtocolError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| ProtocolError::Format { path: path.display().to_string(), reason: e.to_string() })
    }
}

/// How many identities of each dataset go to the evaluation side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSizing {
    /// `round(n * f)`, clamped so both sides keep at least one identity.
    Fraction(f64),
    /// Exact evaluation counts per dataset.
    Counts(BTreeMap<Dataset, usize>),
}

impl SplitSizing {
    /// The published sizes: 24 of 85 CREMA-D and 8 of 24 RAVDESS identities.
    pub fn canonical() -> Self {
        SplitSizing::Counts([(Dataset::CremaD, 24), (Dataset::Ravdess, 8)].into())
    }

    pub fn eval_count(&self, dataset: Dataset, n: usize) -> Result<usize, ProtocolError> {
        match self {
            SplitSizing::Fraction(f) => {
                if !(0.0..=1.0).contains(f) {
                    return Err(ProtocolError::Sizing(format!("eval fraction {f} outside [0, 1]")));
                }
                Ok(((n as f64 * f).round() as usize).clamp(1, n - 1))
            }
            SplitSizing::Counts(m) => {
                let k = *m
                    .get(&dataset)
                    .ok_or_else(|| ProtocolError::Sizing(format!("no evaluation count for {dataset}")))?;
                if k == 0 || k >= n {
                    return Err(ProtocolError::Sizing(format!("{dataset}: evaluation count {k} must be in 1..{n}")));
                }
                Ok(k)
            }
        }
    }
}

/// One stratification cell whose evaluation share is off by more than one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellImbalance {
    pub dataset: Dataset,
    pub cell: String,
    pub members: usize,
    pub evaluation: usize,
    pub ideal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub split: Split,
    pub imbalance: Vec<CellImbalance>,
}

/// Stratified, identity-disjoint split computed per dataset.
///
/// Identities are grouped into cells by the joint value of `stratify_on`.
/// Each cell receives its proportional share of evaluation slots, rounded
/// down, and leftover slots go to the largest remainders, visiting cells from
/// largest to smallest with seeded tie-breaking. Members inside a cell are
/// chosen by a seeded shuffle.
pub fn make_split(
    catalog: &Catalog,
    sizing: &SplitSizing,
    stratify_on: &[Attribute],
    seed: u64,
) -> Result<SplitOutcome, ProtocolError> {
    let mut split = Split::default();
    let mut imbalance = Vec::new();
    for dataset in catalog.datasets() {
        let records: Vec<_> = catalog.identities().filter(|r| r.dataset == dataset).collect();
        let n = records.len();
        if n < 2 {
            return Err(ProtocolError::TooFewIdentities { dataset, found: n });
        }
        let n_eval = sizing.eval_count(dataset, n)?;
        let mut rng = seed::rng(seed, &[seed::label("split"), seed::label(dataset.as_str())]);

        let mut cells: BTreeMap<Vec<&'static str>, Vec<IdentityId>> = BTreeMap::new();
        for r in &records {
            let key = stratify_on.iter().map(|a| r.attribute(*a).unwrap_or("unknown")).collect();
            cells.entry(key).or_default().push(r.id.clone());
        }
        let mut cells: Vec<(Vec<&'static str>, Vec<IdentityId>, u64)> =
            cells.into_iter().map(|(k, v)| (k, v, rng.random())).collect();
        cells.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.2.cmp(&b.2)));

        let ideal: Vec<f64> = cells.iter().map(|c| c.1.len() as f64 * n_eval as f64 / n as f64).collect();
        let mut quota: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
        let mut left = n_eval - quota.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..cells.len()).collect();
        // Stable sort keeps the largest-cell-first order among equal remainders.
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - ideal[a].floor();
            let rb = ideal[b] - ideal[b].floor();
            rb.partial_cmp(&ra).expect("finite")
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            if quota[i] < cells[i].1.len() {
                quota[i] += 1;
                left -= 1;
            }
        }

        for (i, (key, members, _)) in cells.iter_mut().enumerate() {
            members.sort();
            members.shuffle(&mut rng);
            for (j, id) in members.iter().enumerate() {
                if j < quota[i] {
                    split.evaluation.insert(id.clone());
                } else {
                    split.development.insert(id.clone());
                }
            }
            if (quota[i] as f64 - ideal[i]).abs() > 1.0 {
                imbalance.push(CellImbalance {
                    dataset,
                    cell: key.join("/"),
                    members: members.len(),
                    evaluation: quota[i],
                    ideal: ideal[i],
                });
            }
        }
    }
    Ok(SplitOutcome { split, imbalance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AgeRange, Ethnicity, Gender, IdentityRecord};

    fn ids(n: usize, dataset: Dataset) -> Vec<IdentityRecord> {
        (0..n)
            .map(|i| IdentityRecord {
                id: format!("{}{i:03}", &dataset.as_str()[..1]).into(),
                dataset,
                gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
                ethnicity: [Ethnicity::Asian, Ethnicity::Caucasian, Ethnicity::Hispanic][i % 3],
                age_range: AgeRange::From20To30,
            })
            .collect()
    }

    fn catalog(n_crema: usize, n_rav: usize) -> Catalog {
        let mut r = ids(n_crema, Dataset::CremaD);
        r.extend(ids(n_rav, Dataset::Ravdess));
        Catalog::new(r, vec![], vec![]).unwrap()
    }

    #[test]
    fn canonical_sizes() {
        let c = catalog(85, 24);
        let out = make_split(&c, &SplitSizing::canonical(), Attribute::ALL, 7).unwrap();
        let count = |side: &BTreeSet<IdentityId>, d: Dataset| {
            side.iter().filter(|id| c.identity(id).unwrap().dataset == d).count()
        };
        assert_eq!(count(&out.split.evaluation, Dataset::CremaD), 24);
        assert_eq!(count(&out.split.development, Dataset::CremaD), 61);
        assert_eq!(count(&out.split.evaluation, Dataset::Ravdess), 8);
        assert_eq!(count(&out.split.development, Dataset::Ravdess), 16);
        out.split.check(&c).unwrap();
        assert!(out.imbalance.is_empty());
    }

    #[test]
    fn two_identities_split_one_one() {
        let c = catalog(2, 0);
        let out = make_split(&c, &SplitSizing::Fraction(0.3), Attribute::ALL, 1).unwrap();
        assert_eq!(out.split.evaluation.len(), 1);
        assert_eq!(out.split.development.len(), 1);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let c = catalog(40, 12);
        let a = make_split(&c, &SplitSizing::Fraction(0.3), Attribute::ALL, 5).unwrap();
        let b = make_split(&c, &SplitSizing::Fraction(0.3), Attribute::ALL, 5).unwrap();
        assert_eq!(a.split, b.split);
        let others: BTreeSet<_> = (0..20)
            .map(|s| make_split(&c, &SplitSizing::Fraction(0.3), Attribute::ALL, s).unwrap().split.evaluation)
            .collect();
        assert!(others.len() > 1);
    }

    #[test]
    fn each_cell_within_one_of_its_share() {
        let c = catalog(85, 24);
        let out = make_split(&c, &SplitSizing::Fraction(0.3), &[Attribute::Gender, Attribute::Ethnicity], 9).unwrap();
        for d in [Dataset::CremaD, Dataset::Ravdess] {
            let recs: Vec<_> = c.identities().filter(|r| r.dataset == d).collect();
            let n_eval = recs.iter().filter(|r| out.split.evaluation.contains(&r.id)).count();
            for g in [Gender::Female, Gender::Male] {
                for e in [Ethnicity::Asian, Ethnicity::Caucasian, Ethnicity::Hispanic] {
                    let cell: Vec<_> = recs.iter().filter(|r| r.gender == g && r.ethnicity == e).collect();
                    let ev = cell.iter().filter(|r| out.split.evaluation.contains(&r.id)).count() as f64;
                    let ideal = cell.len() as f64 * n_eval as f64 / recs.len() as f64;
                    assert!((ev - ideal).abs() <= 1.0, "{d} {g} {e}: {ev} vs {ideal}");
                }
            }
        }
    }

    #[test]
    fn too_few_and_bad_sizing() {
        let c = catalog(1, 0);
        assert!(matches!(
            make_split(&c, &SplitSizing::Fraction(0.3), &[], 0),
            Err(ProtocolError::TooFewIdentities { .. })
        ));
        let c = catalog(5, 0);
        let bad = SplitSizing::Counts([(Dataset::CremaD, 5)].into());
        assert!(matches!(make_split(&c, &bad, &[], 0), Err(ProtocolError::Sizing(_))));
    }

    #[test]
    fn json_round_trip_and_check() {
        let c = catalog(6, 3);
        let s = make_split(&c, &SplitSizing::Fraction(0.3), &[], 2).unwrap().split;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        s.save(&p).unwrap();
        assert_eq!(Split::load(&p).unwrap(), s);
        let mut bad = s.clone();
        let moved = bad.development.iter().next().unwrap().clone();
        bad.evaluation.insert(moved);
        assert!(bad.check(&c).is_err());
    }
}
