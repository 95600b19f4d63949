use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::catalog::{Catalog, Dataset, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Train and evaluate on the same dataset and generator.
    IntraIntra,
    /// Train on one generator, evaluate on each generator, plus training on all.
    IntraCrossGenerator,
    /// Train on one dataset, evaluate on the same generator of each dataset.
    CrossDatasetIntra,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::IntraIntra => "intra-intra",
            Scenario::IntraCrossGenerator => "intra-cross-generator",
            Scenario::CrossDatasetIntra => "cross-dataset-intra",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Training generator: one pipeline or the union of all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrainGenerator {
    One(Generator),
    All,
}

impl TrainGenerator {
    pub fn includes(self, g: Generator) -> bool {
        match self {
            TrainGenerator::One(x) => x == g,
            TrainGenerator::All => true,
        }
    }
}

impl fmt::Display for TrainGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainGenerator::One(g) => g.fmt(f),
            TrainGenerator::All => f.write_str("All"),
        }
    }
}

impl std::str::FromStr for TrainGenerator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("all") {
            Ok(TrainGenerator::All)
        } else {
            s.parse().map(TrainGenerator::One)
        }
    }
}

impl Serialize for TrainGenerator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrainGenerator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrainSet {
    pub dataset: Dataset,
    pub generator: TrainGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EvalSet {
    pub dataset: Dataset,
    pub generator: Generator,
}

impl fmt::Display for TrainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.generator)
    }
}

impl fmt::Display for EvalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dataset, self.generator)
    }
}

/// A block of experiments. Empty `datasets` / `generators` mean every one
/// present in the catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    #[serde(default)]
    pub datasets: Vec<Dataset>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    pub models: Vec<String>,
    #[serde(default)]
    pub window_len: Option<usize>,
}

/// One concrete (training set, evaluation set, model) job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub scenario: Scenario,
    pub train: TrainSet,
    pub eval: EvalSet,
    pub model: String,
    pub window_len: usize,
}

impl Job {
    /// File-system friendly identifier, unique within a plan.
    pub fn id(&self) -> String {
        format!(
            "{}_{}__{}_{}__{}__F{}",
            self.train.dataset,
            self.train.generator,
            self.eval.dataset,
            self.eval.generator,
            self.model,
            self.window_len
        )
    }

    /// Condition label as used in reports, e.g. `CREMA-D/GAGA->CREMA-D/LIVE`.
    pub fn condition(&self) -> String {
        format!("{}->{}", self.train, self.eval)
    }

    fn key(&self) -> (TrainSet, EvalSet, &str, usize) {
        (self.train, self.eval, &self.model, self.window_len)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunPlan {
    pub jobs: Vec<Job>,
}

impl RunPlan {
    /// Distinct (training set, model, F) combinations, in first-use order.
    pub fn trainings(&self) -> Vec<(TrainSet, String, usize)> {
        let mut seen = BTreeSet::new();
        self.jobs
            .iter()
            .filter(|j| seen.insert((j.train, j.model.clone(), j.window_len)))
            .map(|j| (j.train, j.model.clone(), j.window_len))
            .collect()
    }
}

/// Expands experiment specs into concrete jobs. Jobs shared between specs
/// (e.g. G->G appears in both intra-intra and cross-generator blocks) are
/// kept once, at their first position.
pub fn experiment_matrix(
    specs: &[ExperimentSpec],
    catalog: &Catalog,
    models: &[&str],
    default_window: usize,
) -> Result<RunPlan, ProtocolError> {
    let datasets = catalog.datasets();
    let generators = catalog.generators();
    let mut jobs: Vec<Job> = Vec::new();
    for spec in specs {
        let ds: Vec<Dataset> =
            if spec.datasets.is_empty() { datasets.iter().copied().collect() } else { spec.datasets.clone() };
        let gs: Vec<Generator> =
            if spec.generators.is_empty() { generators.iter().copied().collect() } else { spec.generators.clone() };
        if let Some(d) = ds.iter().find(|d| !datasets.contains(d)) {
            return Err(ProtocolError::Dangling(format!("dataset {d} has no identities in the catalog")));
        }
        if let Some(g) = gs.iter().find(|g| !generators.contains(g)) {
            return Err(ProtocolError::Dangling(format!("generator {g} has no videos in the catalog")));
        }
        if spec.models.is_empty() {
            return Err(ProtocolError::Dangling(format!("{} spec lists no models", spec.scenario)));
        }
        if let Some(m) = spec.models.iter().find(|m| !models.contains(&m.as_str())) {
            return Err(ProtocolError::Dangling(format!("model {m} is not defined")));
        }
        let window_len = spec.window_len.unwrap_or(default_window);
        let mut pairs: Vec<(TrainSet, EvalSet)> = Vec::new();
        for &d in &ds {
            for &g in &gs {
                let own = TrainSet { dataset: d, generator: TrainGenerator::One(g) };
                let here = EvalSet { dataset: d, generator: g };
                pairs.push((own, here));
                match spec.scenario {
                    Scenario::IntraIntra => {}
                    Scenario::IntraCrossGenerator => {
                        for &x in generators.iter().filter(|x| **x != g) {
                            pairs.push((own, EvalSet { dataset: d, generator: x }));
                        }
                        pairs.push((TrainSet { dataset: d, generator: TrainGenerator::All }, here));
                    }
                    Scenario::CrossDatasetIntra => {
                        for &other in datasets.iter().filter(|o| **o != d) {
                            pairs.push((own, EvalSet { dataset: other, generator: g }));
                        }
                    }
                }
            }
        }
        for (train, eval) in pairs {
            for model in &spec.models {
                let job = Job { scenario: spec.scenario, train, eval, model: model.clone(), window_len };
                if !jobs.iter().any(|j| j.key() == job.key()) {
                    jobs.push(job);
                }
            }
        }
    }
    Ok(RunPlan { jobs })
}
