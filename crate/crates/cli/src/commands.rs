use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use avfp_core::benchmark::canonical_layout;
use avfp_core::catalog::{
    load_manifest, save_manifest, validate_counts, Attribute, Catalog, CountTable, ValidationReport,
};
use avfp_core::embedder::{load_checkpoint, save_checkpoint, train, EmbedderConfig, Hyper};
use avfp_core::evaluation::{
    evaluate, fairness_csv, fairness_report, fairness_text, reports_csv, reports_text, roc, roc_csv,
};
use avfp_core::feature_store::{import_csv, FeatureStore};
use avfp_core::protocol::{
    generate_trials, make_split, read_trials, training_videos, write_trials, Side, Split, SplitSizing, TrainSet,
};
use avfp_core::runner::{cmd_run, RunConfig};
use avfp_core::scoring::{read_scores, score_trials, write_scores, EmbeddingCache, NamedEmbedder, ScoreTable};
use avfp_core::synthbench::{synth_corpus, SynthConfig};

use crate::{Command, Manifest, Outcome};

pub fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Validate { manifest, split } => validate(&manifest, split.as_deref()),
        Command::Synth { out, config, canonical, n_identities, videos_per_id, min_frames, max_frames, dim, seed } => {
            if canonical {
                synth_canonical(&out)
            } else {
                let cfg = match config {
                    Some(path) => SynthConfig::from_toml(&read(&path)?).with_context(|| path.display().to_string())?,
                    None => {
                        let cfg = SynthConfig::new(n_identities, videos_per_id, (min_frames, max_frames), dim, seed);
                        cfg.validate()?;
                        cfg
                    }
                };
                synth(&cfg, &out)
            }
        }
        Command::Import { out, kind, files } => {
            let first = files.first().expect("clap requires one file");
            let mut store: Option<FeatureStore> = None;
            for path in &files {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .with_context(|| format!("{}: no usable file stem", path.display()))?;
                let seq = import_csv(path, id, kind)?;
                let s = match &mut store {
                    Some(s) => s,
                    None => store.insert(FeatureStore::new(kind, seq.dim())?),
                };
                s.put(seq).with_context(|| path.display().to_string())?;
            }
            let store = store.with_context(|| format!("{}: nothing imported", first.display()))?;
            store.write(&out)?;
            println!("wrote {} sequences of dim {} to {}", store.len(), store.dim(), out.display());
            Ok(Outcome::Ok)
        }
        Command::Trials { manifest, out, split, eval_fraction, canonical_sizes, convention, seed } => {
            let catalog = load(&manifest)?;
            let split = match split {
                Some(path) => Split::load(&path)?,
                None => {
                    let sizing =
                        if canonical_sizes { SplitSizing::canonical() } else { SplitSizing::Fraction(eval_fraction) };
                    let outcome = make_split(&catalog, &sizing, Attribute::ALL, seed)?;
                    for c in &outcome.imbalance {
                        eprintln!(
                            "note: {} cell {} has {} of {} identities in evaluation (ideal {:.2})",
                            c.dataset, c.cell, c.evaluation, c.members, c.ideal
                        );
                    }
                    outcome.split
                }
            };
            split.check(&catalog)?;
            let trials = generate_trials(&catalog, &split, convention)?;
            mkdir(&out)?;
            split.save(&out.join("split.json"))?;
            write_trials(&trials.trials, &out.join("trials.csv"))?;
            println!("dataset,generator,genuine,impostor");
            for ((d, g), c) in &trials.counts {
                println!("{d},{g},{},{}", c.genuine, c.impostor);
            }
            let t = trials.totals();
            println!("total,,{},{}", t.genuine, t.impostor);
            Ok(Outcome::Ok)
        }
        Command::Train { manifest, store, split, dataset, generator, out, window, epochs, lr, seed } => {
            let catalog = load(&manifest)?;
            let split = Split::load(&split)?;
            split.check(&catalog)?;
            let store = FeatureStore::read(&store)?;
            let videos = training_videos(&catalog, &split, TrainSet { dataset, generator });
            if videos.is_empty() {
                bail!("no development videos for {dataset}/{generator}");
            }
            let mut hyper = Hyper::default();
            if let Some(e) = epochs {
                hyper.epochs = e;
            }
            if let Some(lr) = lr {
                hyper.lr = lr;
            }
            let config = EmbedderConfig { window_len: window, seed, ..EmbedderConfig::new(store.dim()) };
            let output = train(&store, &videos, config, &hyper)?;
            save_checkpoint(&output.params, &out)?;
            if let Some(last) = output.log.last() {
                println!(
                    "epoch {} loss {:.4} probe {:.4} (initial {:.4})",
                    last.epoch, last.loss, last.probe_loss, output.initial_probe_loss
                );
            }
            if !output.skipped.is_empty() {
                eprintln!("note: {} videos shorter than one window were left out", output.skipped.len());
            }
            println!("wrote {}", out.display());
            Ok(Outcome::Ok)
        }
        Command::Score { model, store, trials, out, name, window } => {
            let params = load_checkpoint(&model)?;
            let f = window.unwrap_or(params.config.window_len);
            let store = FeatureStore::read(&store)?;
            let trials = read_trials(&trials)?;
            let embedder = NamedEmbedder { name, params };
            let table = score_trials(&embedder, &store, &trials.trials, f, &EmbeddingCache::new())?;
            write_scores(&table, &out)?;
            let unscorable = table.unscorable().count();
            println!("scored {} trials ({unscorable} unscorable)", table.rows.len());
            if !table.missing.is_empty() {
                eprintln!("note: {} videos have no features; their trials were skipped", table.missing.len());
            }
            Ok(Outcome::Ok)
        }
        Command::Evaluate { scores, condition, out, roc: roc_dir } => {
            if !condition.is_empty() && condition.len() != scores.len() {
                bail!("{} conditions given for {} score tables", condition.len(), scores.len());
            }
            let mut reports = Vec::new();
            for (i, path) in scores.iter().enumerate() {
                let table = read_scores(path)?;
                let cond = condition.get(i).cloned().unwrap_or_else(|| stem(path));
                let report = evaluate(&table, &cond).with_context(|| path.display().to_string())?;
                if let Some(dir) = &roc_dir {
                    mkdir(dir)?;
                    let (g, i) = table.by_label();
                    write(&dir.join(format!("{}.csv", stem(path))), &roc_csv(&roc(&g, &i)?))?;
                }
                reports.push(report);
            }
            print!("{}", reports_text(&reports));
            if let Some(out) = out {
                write(&out, &reports_csv(&reports))?;
            }
            Ok(Outcome::Ok)
        }
        Command::Fairness { scores, manifest, attributes, condition, out } => {
            let catalog = load(&manifest)?;
            let table = read_scores(&scores)?;
            let condition = condition.unwrap_or_else(|| stem(&scores));
            let reports = per_dataset(&table, &catalog)?
                .iter()
                .map(|t| fairness_report(t, &catalog, &attributes, &condition))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", fairness_text(&reports));
            if let Some(out) = out {
                write(&out, &fairness_csv(&reports))?;
            }
            Ok(Outcome::Ok)
        }
        Command::Run { config, workers, run_id, out_dir, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if workers.is_some() {
                cfg.workers = workers;
            }
            if let Some(id) = run_id {
                cfg.run_id = id;
            }
            if let Some(dir) = out_dir {
                cfg.out_dir = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let summary = cmd_run(&cfg)?;
            print!("{}", reports_text(&summary.reports));
            println!(
                "{} reports, {} resumed jobs, {} failures; outputs in {}",
                summary.reports.len(),
                summary.resumed,
                summary.failures.len(),
                summary.dir.display()
            );
            for f in &summary.failures {
                eprintln!("job {} failed: {}", f.job, f.error);
            }
            Ok(if summary.failures.is_empty() { Outcome::Ok } else { Outcome::CheckFailed })
        }
    }
}

fn validate(manifest: &Manifest, split: Option<&Path>) -> Result<Outcome> {
    let catalog = load(manifest)?;
    let mut ok = report(&validate_counts(&catalog, &CountTable::published_total()));
    if let Some(path) = split {
        let split = Split::load(path)?;
        split.check(&catalog)?;
        for (side, table) in [
            (Side::Development, CountTable::published_development()),
            (Side::Evaluation, CountTable::published_evaluation()),
        ] {
            let part = catalog.filter_videos(|v| split.video_side(v) == Some(side));
            ok &= report(&validate_counts(&part, &table));
        }
    }
    Ok(if ok { Outcome::Ok } else { Outcome::CheckFailed })
}

/// Prints one line per mismatching cell and a summary; true when all cells match.
fn report(r: &ValidationReport) -> bool {
    for c in r.failures() {
        println!(
            "{} {} {} {}: expected {}, found {}",
            r.table,
            c.dataset,
            c.generator,
            c.kind.as_str(),
            c.expected,
            c.observed
        );
    }
    let failed = r.failures().count();
    println!(
        "{}: {} of {} cells match ({} videos){}",
        r.table,
        r.cells.len() - failed,
        r.cells.len(),
        r.observed_total(),
        if failed == 0 { "" } else { " FAIL" }
    );
    failed == 0
}

fn synth_canonical(out: &Path) -> Result<Outcome> {
    let layout = canonical_layout();
    mkdir(out)?;
    save_manifest(&layout.catalog, &out.join("identities.csv"), &out.join("videos.csv"))?;
    layout.split.save(&out.join("split.json"))?;
    println!(
        "wrote {} identities and {} videos to {}",
        layout.catalog.identities().len(),
        layout.catalog.videos().len(),
        out.display()
    );
    Ok(Outcome::Ok)
}

fn synth(cfg: &SynthConfig, out: &Path) -> Result<Outcome> {
    let (catalog, store) = synth_corpus(cfg)?;
    mkdir(out)?;
    save_manifest(&catalog, &out.join("identities.csv"), &out.join("videos.csv"))?;
    store.write(&out.join("features.avfs"))?;
    println!("wrote {} identities and {} videos to {}", catalog.identities().len(), store.len(), out.display());
    Ok(Outcome::Ok)
}

/// Splits a score table by the enrollment video's dataset.
fn per_dataset(table: &ScoreTable, catalog: &Catalog) -> Result<Vec<ScoreTable>> {
    let mut parts: BTreeMap<_, ScoreTable> = BTreeMap::new();
    for row in &table.rows {
        let v =
            catalog.video(&row.enroll_video).with_context(|| format!("video {} not in manifest", row.enroll_video))?;
        parts
            .entry(v.dataset)
            .or_insert_with(|| ScoreTable { model: table.model.clone(), ..ScoreTable::default() })
            .rows
            .push(row.clone());
    }
    Ok(parts.into_values().collect())
}

fn load(m: &Manifest) -> Result<Catalog> {
    Ok(load_manifest(&m.identities, &m.videos)?)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &PathBuf, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}
