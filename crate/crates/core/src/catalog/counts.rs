//! Per-(dataset, generator, reenactment kind) video counts and their
//! comparison against published database statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Catalog, Dataset, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReenactKind {
    #[serde(rename = "self")]
    SelfReenactment,
    #[serde(rename = "cross")]
    CrossReenactment,
}

impl ReenactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReenactKind::SelfReenactment => "self",
            ReenactKind::CrossReenactment => "cross",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCell {
    pub dataset: Dataset,
    pub generator: Generator,
    pub kind: ReenactKind,
    pub expected: u64,
}

/// Expected video counts, one cell per (dataset, generator, kind).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub name: String,
    pub cells: Vec<CountCell>,
}

impl CountTable {
    /// Same per-generator counts replicated over all three generators.
    pub fn uniform(name: &str, per_generator: &[(Dataset, u64, u64)]) -> Self {
        let mut cells = Vec::new();
        for &generator in Generator::ALL {
            for &(dataset, self_n, cross_n) in per_generator {
                cells.push(CountCell { dataset, generator, kind: ReenactKind::SelfReenactment, expected: self_n });
                cells.push(CountCell { dataset, generator, kind: ReenactKind::CrossReenactment, expected: cross_n });
            }
        }
        Self { name: name.to_string(), cells }
    }

    /// Whole database, per generator.
    pub fn published_total() -> Self {
        Self::uniform("total", &[(Dataset::CremaD, 6_120, 11_718), (Dataset::Ravdess, 1_440, 2_745)])
    }

    /// Development split, per generator.
    pub fn published_development() -> Self {
        Self::uniform("development", &[(Dataset::CremaD, 4_392, 8_280), (Dataset::Ravdess, 960, 1_905)])
    }

    /// Evaluation split, per generator.
    pub fn published_evaluation() -> Self {
        Self::uniform("evaluation", &[(Dataset::CremaD, 1_728, 3_438), (Dataset::Ravdess, 480, 840)])
    }

    pub fn expected_total(&self) -> u64 {
        self.cells.iter().map(|c| c.expected).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: Dataset,
    pub generator: Generator,
    pub kind: ReenactKind,
    pub expected: u64,
    pub observed: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub table: String,
    pub cells: Vec<CellResult>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellResult> {
        self.cells.iter().filter(|c| !c.pass)
    }

    /// Observed videos of one generator, summed over datasets and kinds.
    pub fn observed_for_generator(&self, generator: Generator) -> u64 {
        self.cells.iter().filter(|c| c.generator == generator).map(|c| c.observed).sum()
    }

    pub fn observed_total(&self) -> u64 {
        self.cells.iter().map(|c| c.observed).sum()
    }
}

/// Counts videos per (dataset, generator, kind).
pub fn count_videos(catalog: &Catalog) -> BTreeMap<(Dataset, Generator, ReenactKind), u64> {
    let mut counts = BTreeMap::new();
    for v in catalog.videos() {
        *counts.entry((v.dataset, v.generator, v.kind())).or_insert(0) += 1;
    }
    counts
}

/// Compares observed counts with `expected`, cell by cell. Mismatches are
/// report entries, never errors.
pub fn validate_counts(catalog: &Catalog, expected: &CountTable) -> ValidationReport {
    let observed = count_videos(catalog);
    let cells = expected
        .cells
        .iter()
        .map(|c| {
            let got = observed.get(&(c.dataset, c.generator, c.kind)).copied().unwrap_or(0);
            CellResult {
                dataset: c.dataset,
                generator: c.generator,
                kind: c.kind,
                expected: c.expected,
                observed: got,
                pass: got == c.expected,
            }
        })
        .collect();
    ValidationReport { table: expected.name.clone(), cells }
}
