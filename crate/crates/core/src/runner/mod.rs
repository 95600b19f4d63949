//! Declarative benchmark runs: data, split and trials, then the
//! experiment matrix (train, score, evaluate) and rendered reports.
//!
//! Layout of `runs/<run_id>/`:
//!
//! ```text
//! config.toml      effective config, defaults spelled out
//! data/            manifests of generated corpora
//! split.json
//! trials.csv
//! plan.json        expanded job list
//! models/          checkpoints and training logs
//! scores/<job>.csv
//! jobs/<job>.done  completion markers
//! reports/         report, delta, fairness and ROC files
//! ```
//!
//! Every artifact is written to a temporary name and renamed into place,
//! and finished jobs are skipped on the next invocation, so an
//! interrupted run resumes to the same outputs.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use config::{DataConfig, FairnessConfig, FusionConfig, ModelConfig, ProtocolConfig, RunConfig};

use crate::catalog::{load_manifest, save_manifest, Catalog, CatalogError};
use crate::embedder::{load_checkpoint, save_checkpoint, train, EmbedderError, EmbedderParams, TrainError};
use crate::evaluation::{
    delta_table, evaluate, fairness_csv, fairness_report, fairness_text, render_delta_grid, reports_csv, reports_text,
    roc, roc_csv, DeltaTable, EvalError, EvalReport, FairnessReport,
};
use crate::feature_store::{FeatureStore, StoreError};
use crate::protocol::{
    experiment_matrix, generate_trials, make_split, training_videos, write_trials, Job, ProtocolError, Split,
    TrainGenerator, TrainSet, TrialList,
};
use crate::scoring::{
    fuse_tables, read_scores, score_trials, write_scores, EmbeddingCache, NamedEmbedder, ScoreTable, ScoringError,
};
use crate::seed;
use crate::synthbench::{merge, synth_corpus, SynthError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path} holds a run with a different config; choose another run_id or remove it")]
    ConfigChanged { path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl RunError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io { path: path.to_path_buf(), source }
    }

    /// Errors caused by the inputs rather than by a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::ConfigChanged { .. }
                | RunError::Io { .. }
                | RunError::Catalog(_)
                | RunError::Store(_)
                | RunError::Protocol(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobFailure {
    pub job: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub deltas: Vec<DeltaTable>,
    pub fairness: Vec<FairnessReport>,
    pub failures: Vec<JobFailure>,
    /// Jobs skipped because a completion marker was present.
    pub resumed: usize,
    pub trials: TrialList,
}

/// Writes `bytes` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| RunError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Runs `write` against a temporary file, then renames it into place.
fn write_with<E>(path: &Path, write: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), RunError>
where
    RunError: From<E>,
{
    let tmp = tmp_path(path);
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(|e| RunError::io(path, e))
}

/// Catalog plus one feature store per trained model.
pub struct RunData {
    pub catalog: Catalog,
    pub stores: BTreeMap<String, Arc<FeatureStore>>,
}

/// Loads manifests and stores, or generates the synthetic corpora.
pub fn load_data(cfg: &RunConfig) -> Result<RunData, RunError> {
    let mut stores = BTreeMap::new();
    let catalog = match &cfg.data {
        DataConfig::Manifest { identities, videos, .. } => load_manifest(identities, videos)?,
        DataConfig::Synthetic { corpora } => {
            let parts = corpora.iter().map(synth_corpus).collect::<Result<Vec<_>, _>>()?;
            let (catalog, store) = merge(parts)?;
            let shared = Arc::new(store);
            for m in cfg.models.iter().filter(|m| m.store.is_none()) {
                stores.insert(m.name.clone(), Arc::clone(&shared));
            }
            catalog
        }
    };
    let mut opened: BTreeMap<&Path, Arc<FeatureStore>> = BTreeMap::new();
    for m in &cfg.models {
        if let Some(path) = &m.store {
            let store = match opened.get(path.as_path()) {
                Some(s) => Arc::clone(s),
                None => {
                    let s = Arc::new(FeatureStore::read(path)?);
                    opened.insert(path, Arc::clone(&s));
                    s
                }
            };
            stores.insert(m.name.clone(), store);
        }
    }
    Ok(RunData { catalog, stores })
}

/// The split named in the config, or one drawn from the protocol sizing.
pub fn resolve_split(cfg: &RunConfig, catalog: &Catalog) -> Result<Split, RunError> {
    let split = match &cfg.data {
        DataConfig::Manifest { split: Some(path), .. } => Split::load(path)?,
        _ => {
            make_split(
                catalog,
                &cfg.protocol.split,
                &cfg.protocol.stratify,
                seed::derive(cfg.seed, &[seed::label("split")]),
            )?
            .split
        }
    };
    split.check(catalog)?;
    Ok(split)
}

type TrainingKey = (TrainSet, String, usize);

fn training_name((train, model, f): &TrainingKey) -> String {
    format!("{}_{}__{}__F{}", train.dataset, train.generator, model, f)
}

/// Adds the member jobs of every fusion job, right before it, unless
/// already planned.
fn expand_fusions(cfg: &RunConfig, jobs: Vec<Job>) -> Vec<Job> {
    let mut out: Vec<Job> = Vec::new();
    let key = |j: &Job| (j.train, j.eval, j.model.clone(), j.window_len);
    let planned: BTreeSet<_> = jobs.iter().map(key).collect();
    for job in jobs {
        if let Some(f) = cfg.fusion(&job.model) {
            for m in &f.members {
                let member = Job { model: m.clone(), ..job.clone() };
                if !planned.contains(&key(&member)) && !out.iter().any(|j| key(j) == key(&member)) {
                    out.push(member);
                }
            }
        }
        if !out.iter().any(|j| key(j) == key(&job)) {
            out.push(job);
        }
    }
    out
}

/// Reference condition of a job: the intra-dataset, intra-generator
/// experiment of its training set (for training on all generators, of the
/// evaluation generator).
fn reference_of(job: &Job) -> Job {
    let g = match job.train.generator {
        TrainGenerator::One(g) => g,
        TrainGenerator::All => job.eval.generator,
    };
    let train = TrainSet { dataset: job.train.dataset, generator: TrainGenerator::One(g) };
    Job { train, eval: crate::protocol::EvalSet { dataset: job.train.dataset, generator: g }, ..job.clone() }
}

struct Context<'a> {
    cfg: &'a RunConfig,
    data: &'a RunData,
    split: &'a Split,
    trials: &'a TrialList,
    dir: PathBuf,
}

impl Context<'_> {
    fn train_one(&self, key: &TrainingKey) -> Result<EmbedderParams, RunError> {
        let path = self.dir.join("models").join(format!("{}.ckpt", training_name(key)));
        if path.exists() {
            return Ok(load_checkpoint(&path)?);
        }
        let (train_set, model, f) = key;
        let mc = self.cfg.model(model).ok_or_else(|| RunError::Config(format!("model {model} is not trainable")))?;
        let store = &self.data.stores[model];
        let s = seed::derive(self.cfg.seed, &[seed::label("train"), seed::label(&training_name(key))]);
        let videos = training_videos(&self.data.catalog, self.split, *train_set);
        let out = train(store, &videos, mc.embedder_config(store.dim(), *f, s), &self.cfg.hyper)?;
        let log = serde_json::to_string_pretty(&out.log).expect("log serializes") + "\n";
        write_atomic(&path.with_extension("log.json"), log.as_bytes())?;
        write_with(&path, |p| save_checkpoint(&out.params, p))?;
        Ok(out.params)
    }

    fn eval_trials(&self, job: &Job) -> Vec<crate::protocol::Trial> {
        self.trials.filter(|t| t.dataset == job.eval.dataset && t.generator == job.eval.generator).trials
    }

    fn score_base(&self, job: &Job, params: &EmbedderParams, cache: &EmbeddingCache) -> Result<ScoreTable, RunError> {
        let embedder = NamedEmbedder { name: job.model.clone(), params: params.clone() };
        let store = &self.data.stores[&job.model];
        Ok(score_trials(&embedder, store, &self.eval_trials(job), job.window_len, cache)?)
    }

    fn score_path(&self, job: &Job) -> PathBuf {
        self.dir.join("scores").join(format!("{}.csv", job.id()))
    }

    fn marker(&self, job: &Job) -> PathBuf {
        self.dir.join("jobs").join(format!("{}.done", job.id()))
    }

    fn finish(&self, job: &Job, table: &ScoreTable) -> Result<(), RunError> {
        write_with(&self.score_path(job), |p| write_scores(table, p))?;
        let report = evaluate(table, &job.condition())?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_atomic(&self.marker(job), text.as_bytes())
    }
}

/// Executes a run end to end. Per-job failures are collected in the
/// summary rather than aborting the run.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    for sub in ["", "data", "models", "scores", "jobs", "reports", "reports/roc"] {
        mkdir(&dir.join(sub))?;
    }
    let effective = cfg.to_toml();
    let config_path = dir.join("config.toml");
    match std::fs::read_to_string(&config_path) {
        Ok(old) if old != effective => return Err(RunError::ConfigChanged { path: dir }),
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&config_path, effective.as_bytes())?,
        Err(e) => return Err(RunError::io(&config_path, e)),
    }

    let data = load_data(cfg)?;
    if matches!(cfg.data, DataConfig::Synthetic { .. }) {
        let (i, v) = (dir.join("data/identities.csv"), dir.join("data/videos.csv"));
        save_manifest(&data.catalog, &i, &v)?;
    }
    let split = resolve_split(cfg, &data.catalog)?;
    write_with(&dir.join("split.json"), |p| split.save(p))?;
    let trials = generate_trials(&data.catalog, &split, cfg.protocol.convention)?;
    write_with(&dir.join("trials.csv"), |p| write_trials(&trials.trials, p))?;

    let plan = experiment_matrix(&cfg.experiments, &data.catalog, &cfg.model_names(), cfg.protocol.window)?;
    let jobs = expand_fusions(cfg, plan.jobs);
    write_atomic(
        &dir.join("plan.json"),
        (serde_json::to_string_pretty(&jobs).expect("plan serializes") + "\n").as_bytes(),
    )?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Config(format!("worker pool: {e}")))?;
    let ctx = Context { cfg, data: &data, split: &split, trials: &trials, dir: dir.clone() };

    let pending: Vec<&Job> = jobs.iter().filter(|j| !(ctx.marker(j).exists() && ctx.score_path(j).exists())).collect();
    let resumed = jobs.len() - pending.len();
    let trainings: BTreeSet<TrainingKey> = pending
        .iter()
        .filter(|j| cfg.model(&j.model).is_some())
        .map(|j| (j.train, j.model.clone(), j.window_len))
        .collect();
    let trainings: Vec<TrainingKey> = trainings.into_iter().collect();
    let trained: BTreeMap<TrainingKey, Result<EmbedderParams, String>> = pool
        .install(|| trainings.par_iter().map(|k| (k.clone(), ctx.train_one(k).map_err(|e| e.to_string()))).collect());
    let caches: BTreeMap<&TrainingKey, EmbeddingCache> = trainings.iter().map(|k| (k, EmbeddingCache::new())).collect();

    // Base models first, then fusions, which read their members' tables.
    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    for fused in [false, true] {
        let batch: Vec<&&Job> = pending.iter().filter(|j| cfg.fusion(&j.model).is_some() == fused).collect();
        let results: Vec<(String, Result<(), String>)> = pool.install(|| {
            batch
                .par_iter()
                .map(|job| {
                    let r = if fused {
                        fuse_job(&ctx, job, &failures)
                    } else {
                        let key = (job.train, job.model.clone(), job.window_len);
                        match &trained[&key] {
                            Ok(params) => ctx
                                .score_base(job, params, &caches[&key])
                                .and_then(|t| ctx.finish(job, &t))
                                .map_err(|e| e.to_string()),
                            Err(e) => Err(format!("training failed: {e}")),
                        }
                    };
                    (job.id(), r)
                })
                .collect()
        });
        for (id, r) in results {
            if let Err(e) = r {
                failures.insert(id, e);
            }
        }
    }

    let mut done: Vec<(&Job, ScoreTable)> = Vec::new();
    for job in &jobs {
        if failures.contains_key(&job.id()) {
            continue;
        }
        done.push((job, read_scores(&ctx.score_path(job))?));
    }
    let mut summary = render(&ctx, &done)?;
    summary.failures = jobs
        .iter()
        .filter_map(|j| failures.get(&j.id()).map(|e| JobFailure { job: j.id(), error: e.clone() }))
        .collect();
    let fail_path = dir.join("reports/failures.txt");
    if summary.failures.is_empty() {
        if fail_path.exists() {
            std::fs::remove_file(&fail_path).map_err(|e| RunError::io(&fail_path, e))?;
        }
    } else {
        let text: String = summary.failures.iter().map(|f| format!("{}: {}\n", f.job, f.error)).collect();
        write_atomic(&fail_path, text.as_bytes())?;
    }
    summary.resumed = resumed;
    summary.trials = trials;
    Ok(summary)
}

fn fuse_job(ctx: &Context<'_>, job: &Job, failures: &BTreeMap<String, String>) -> Result<(), String> {
    let f = ctx.cfg.fusion(&job.model).expect("fusion job");
    let mut tables = Vec::new();
    for m in &f.members {
        let member = Job { model: m.clone(), ..job.clone() };
        if let Some(e) = failures.get(&member.id()) {
            return Err(format!("member {m} failed: {e}"));
        }
        tables.push(read_scores(&ctx.score_path(&member)).map_err(|e| e.to_string())?);
    }
    let fused = fuse_tables(&tables, &f.name, f.zscore).map_err(|e| e.to_string())?;
    ctx.finish(job, &fused).map_err(|e| e.to_string())
}

fn render(ctx: &Context<'_>, done: &[(&Job, ScoreTable)]) -> Result<RunSummary, RunError> {
    let out = ctx.dir.join("reports");
    let mut reports = Vec::new();
    for (job, table) in done {
        reports.push(evaluate(table, &job.condition())?);
        let (g, i) = table.by_label();
        write_atomic(&out.join("roc").join(format!("{}.csv", job.id())), roc_csv(&roc(&g, &i)?).as_bytes())?;
    }
    write_atomic(&out.join("report.csv"), reports_csv(&reports).as_bytes())?;
    write_atomic(&out.join("report.txt"), reports_text(&reports).as_bytes())?;

    // Delta tables: one per (model, reference), rows in plan order.
    let mut groups: Vec<((String, String), Vec<String>)> = Vec::new();
    for (job, _) in done {
        let r = reference_of(job);
        if r.condition() == job.condition() {
            continue;
        }
        let key = (job.model.clone(), r.condition());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(job.condition()),
            None => groups.push((key, vec![job.condition()])),
        }
    }
    let mut deltas = Vec::new();
    for ((model, reference), rows) in &groups {
        let rows: Vec<&str> = rows.iter().map(String::as_str).collect();
        match delta_table(&reports, reference, model, &rows) {
            Ok(t) => deltas.push(t),
            // The reference job failed; its rows are listed among the failures.
            Err(EvalError::MissingReference { .. }) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if !deltas.is_empty() {
        write_atomic(&out.join("delta.txt"), render_delta_grid(&deltas).as_bytes())?;
        write_atomic(&out.join("delta.csv"), delta_csv(&deltas).as_bytes())?;
    }

    let mut fairness = Vec::new();
    if ctx.cfg.fairness.enabled {
        for (job, table) in done {
            fairness.push(fairness_report(table, &ctx.data.catalog, &ctx.cfg.fairness.attributes, &job.condition())?);
        }
        write_atomic(&out.join("fairness.csv"), fairness_csv(&fairness).as_bytes())?;
        write_atomic(&out.join("fairness.txt"), fairness_text(&fairness).as_bytes())?;
    }
    Ok(RunSummary {
        dir: ctx.dir.clone(),
        reports,
        deltas,
        fairness,
        failures: Vec::new(),
        resumed: 0,
        trials: TrialList::default(),
    })
}

fn delta_csv(tables: &[DeltaTable]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["reference", "condition", "model", "reference_auc", "auc", "delta", "delta_rendered"])
        .expect("in-memory write");
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.reference.clone(),
                r.condition.clone(),
                t.model.clone(),
                t.reference_auc.to_string(),
                r.auc.to_string(),
                r.delta.to_string(),
                r.rendered(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
