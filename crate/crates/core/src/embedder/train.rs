//! Triplet training loop.
//!
//! Each step draws `batch` anchor windows spread over several identities,
//! pairs each with a window of the same identity, embeds everything once,
//! mines a semi-hard negative per pair inside the batch and takes one Adam
//! step on the mean triplet loss.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{mine_semi_hard, squared_distance, TripletIndex, DEFAULT_MARGIN};
use super::net::{forward_many, loss_and_grad_from};
use super::optim::Adam;
use super::{EmbedderConfig, EmbedderError, EmbedderParams};
use crate::catalog::{IdentityId, VideoId};
use crate::feature_store::{normalize, FeatureStore, StoreError};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub lr: f64,
    /// Triplets per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    pub margin: f64,
    pub weight_decay: f64,
    /// Anchor windows drawn per identity in a batch.
    pub windows_per_identity: usize,
    /// Steps per epoch; by default enough to visit every training window once.
    pub steps_per_epoch: Option<usize>,
    /// Triplets in the fixed probe batch used for monitoring.
    pub probe_size: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 64,
            epochs: 30,
            margin: DEFAULT_MARGIN,
            weight_decay: 0.0,
            windows_per_identity: 4,
            steps_per_epoch: None,
            probe_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch's steps.
    pub loss: f64,
    /// Fraction of mined triplets with non-zero loss.
    pub active_fraction: f64,
    pub probe_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: EmbedderParams,
    pub log: Vec<EpochLog>,
    /// Probe loss before the first update.
    pub initial_probe_loss: f64,
    /// Videos shorter than one window, left out of training.
    pub skipped: Vec<VideoId>,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("no valid triplet: {0}")]
    NoValidTriplet(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, last_good: Box<EmbedderParams> },
}

struct Sample {
    frames: Array2<f64>,
    label: usize,
}

impl Sample {
    fn window(&self, start: usize, f: usize) -> ArrayView2<'_, f64> {
        self.frames.slice(ndarray::s![start..start + f, ..])
    }
}

#[derive(Clone, Copy)]
struct WindowRef {
    sample: usize,
    start: usize,
}

struct Data {
    samples: Vec<Sample>,
    by_label: Vec<Vec<usize>>,
    window_len: usize,
}

impl Data {
    fn random_window(&self, sample: usize, rng: &mut ChaCha8Rng) -> WindowRef {
        let t = self.samples[sample].frames.nrows();
        WindowRef { sample, start: rng.random_range(0..=t - self.window_len) }
    }

    /// Same identity, another video when there is one.
    fn positive_for(&self, anchor: WindowRef, rng: &mut ChaCha8Rng) -> WindowRef {
        let pool = &self.by_label[self.samples[anchor.sample].label];
        let sample = if pool.len() > 1 {
            loop {
                let s = pool[rng.random_range(0..pool.len())];
                if s != anchor.sample {
                    break s;
                }
            }
        } else {
            anchor.sample
        };
        self.random_window(sample, rng)
    }

    fn view(&self, w: WindowRef) -> ArrayView2<'_, f64> {
        self.samples[w.sample].window(w.start, self.window_len)
    }

    fn label(&self, w: WindowRef) -> usize {
        self.samples[w.sample].label
    }

    /// Anchors spread over identities, each paired with a positive.
    /// Returns windows laid out as [anchors..., positives...].
    fn draw_batch(&self, batch: usize, per_identity: usize, rng: &mut ChaCha8Rng) -> Vec<WindowRef> {
        let mut labels: Vec<usize> = (0..self.by_label.len()).collect();
        labels.shuffle(rng);
        let mut anchors = Vec::with_capacity(batch);
        let mut i = 0;
        while anchors.len() < batch {
            let pool = &self.by_label[labels[i % labels.len()]];
            for _ in 0..per_identity.min(batch - anchors.len()) {
                let s = pool[rng.random_range(0..pool.len())];
                anchors.push(self.random_window(s, rng));
            }
            i += 1;
        }
        let positives: Vec<WindowRef> = anchors.iter().map(|a| self.positive_for(*a, rng)).collect();
        anchors.extend(positives);
        anchors
    }
}

fn probe(data: &Data, size: usize, rng: &mut ChaCha8Rng) -> (Vec<WindowRef>, Vec<TripletIndex>) {
    let mut windows = Vec::with_capacity(3 * size);
    let mut triplets = Vec::with_capacity(size);
    let n_labels = data.by_label.len();
    for _ in 0..size {
        let a_label = rng.random_range(0..n_labels);
        let mut n_label = rng.random_range(0..n_labels - 1);
        if n_label >= a_label {
            n_label += 1;
        }
        let pick = |l: usize, rng: &mut ChaCha8Rng| data.by_label[l][rng.random_range(0..data.by_label[l].len())];
        let a = data.random_window(pick(a_label, rng), rng);
        let p = data.positive_for(a, rng);
        let n = data.random_window(pick(n_label, rng), rng);
        let base = windows.len();
        windows.extend([a, p, n]);
        triplets.push(TripletIndex { anchor: base, positive: base + 1, negative: base + 2 });
    }
    (windows, triplets)
}

fn probe_loss(
    params: &EmbedderParams,
    data: &Data,
    probe: &(Vec<WindowRef>, Vec<TripletIndex>),
    margin: f64,
) -> Result<f64, EmbedderError> {
    let views: Vec<_> = probe.0.iter().map(|w| data.view(*w)).collect();
    let fwds = forward_many(params, &views)?;
    let total: f64 = probe
        .1
        .iter()
        .map(|t| {
            let a = fwds[t.anchor].embedding.view();
            (squared_distance(a, fwds[t.positive].embedding.view())
                - squared_distance(a, fwds[t.negative].embedding.view())
                + margin)
                .max(0.0)
        })
        .sum();
    Ok(total / probe.1.len() as f64)
}

/// Trains an embedder on `videos`, each labelled by its driving identity.
/// Input standardization is fitted on the same videos and stored in the
/// returned parameters. Deterministic given `config.seed`.
pub fn train(
    store: &FeatureStore,
    videos: &[(VideoId, IdentityId)],
    config: EmbedderConfig,
    hyper: &Hyper,
) -> Result<TrainOutput, TrainError> {
    if hyper.batch == 0 || hyper.windows_per_identity == 0 || hyper.probe_size == 0 {
        return Err(TrainError::Hyper("batch, windows_per_identity and probe_size must be positive".into()));
    }
    if !(hyper.lr > 0.0 && hyper.lr.is_finite()) {
        return Err(TrainError::Hyper(format!("learning rate {} must be positive", hyper.lr)));
    }
    if store.dim() != config.input_dim {
        return Err(EmbedderError::Dimension(store.dim(), config.input_dim).into());
    }
    let f = config.window_len;
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    for (vid, who) in videos {
        let seq = store.get(vid)?;
        if seq.len() < f {
            skipped.push(vid.clone());
        } else {
            usable.push((vid, who));
        }
    }
    let mut label_of: BTreeMap<&IdentityId, usize> = BTreeMap::new();
    for (_, who) in &usable {
        let next = label_of.len();
        label_of.entry(*who).or_insert(next);
    }
    if label_of.len() < 2 {
        return Err(TrainError::NoValidTriplet(format!(
            "{} identities with at least {f} frames; need 2",
            label_of.len()
        )));
    }

    let norm = normalize(store, usable.iter().map(|(v, _)| *v))?;
    let mut samples = Vec::with_capacity(usable.len());
    let mut by_label = vec![Vec::new(); label_of.len()];
    let mut total_windows = 0;
    for (vid, who) in &usable {
        let seq = store.get(vid)?;
        let label = label_of[who];
        by_label[label].push(samples.len());
        total_windows += (seq.len() - f) / (f / 2).max(1) + 1;
        samples.push(Sample { frames: norm.apply_f32(seq.frames.view()), label });
    }
    let data = Data { samples, by_label, window_len: f };

    let base = EmbedderParams::init(config.clone())?;
    let mut params = EmbedderParams::from_values(config.clone(), base.values, Some(norm))?;
    let mut opt = Adam::new(params.len(), hyper.lr, hyper.weight_decay);
    let steps = hyper.steps_per_epoch.unwrap_or_else(|| total_windows.div_ceil(hyper.batch).max(1));

    let probe_set = probe(&data, hyper.probe_size, &mut seed::rng(config.seed, &[seed::label("probe")]));
    let initial_probe_loss = probe_loss(&params, &data, &probe_set, hyper.margin)?;
    let mut log = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut rng = seed::rng(config.seed, &[seed::label("train-epoch"), epoch as u64]);
        let mut loss_sum = 0.0;
        let mut active = 0usize;
        let mut mined = 0usize;
        for step in 0..steps {
            let windows = data.draw_batch(hyper.batch, hyper.windows_per_identity, &mut rng);
            let views: Vec<_> = windows.iter().map(|w| data.view(*w)).collect();
            let labels: Vec<usize> = windows.iter().map(|w| data.label(*w)).collect();
            let diverged =
                |params: &EmbedderParams| TrainError::Diverged { epoch, step, last_good: Box::new(params.clone()) };
            let fwds = match forward_many(&params, &views) {
                Ok(f) => f,
                Err(EmbedderError::NonFinite { .. }) => return Err(diverged(&params)),
                Err(e) => return Err(e.into()),
            };
            let embeddings: Vec<_> = fwds.iter().map(|f| f.embedding.clone()).collect();
            let pairs: Vec<(usize, usize)> = (0..hyper.batch).map(|i| (i, i + hyper.batch)).collect();
            let triplets = mine_semi_hard(&embeddings, &labels, &pairs);
            let (loss, grad, n_active) = match loss_and_grad_from(&params, &fwds, &triplets, hyper.margin) {
                Ok(r) => r,
                Err(EmbedderError::NonFinite { .. }) => return Err(diverged(&params)),
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() {
                return Err(diverged(&params));
            }
            let mut next = params.values.clone();
            opt.step(&mut next, &grad);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(diverged(&params));
            }
            params.values = next;
            loss_sum += loss;
            active += n_active;
            mined += triplets.len();
        }
        let probe_loss = probe_loss(&params, &data, &probe_set, hyper.margin)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / steps as f64,
            active_fraction: if mined == 0 { 0.0 } else { active as f64 / mined as f64 },
            probe_loss,
        });
    }
    Ok(TrainOutput { params, log, initial_probe_loss, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{FeatureKind, FeatureSequence};
    use ndarray::Array2;

    fn toy_store(ids: usize, per_id: usize) -> (FeatureStore, Vec<(VideoId, IdentityId)>) {
        let mut store = FeatureStore::new(FeatureKind::Embedding, 4).unwrap();
        let mut videos = Vec::new();
        for i in 0..ids {
            for v in 0..per_id {
                let id = format!("id{i}-v{v}");
                let frames = Array2::from_shape_fn((12, 4), |(t, j)| {
                    let phase = (t as f32 * 0.7 + v as f32) * (1.0 + j as f32 * 0.3);
                    (i as f32 + 1.0) * phase.sin() + if j == i % 4 { 2.0 } else { 0.0 }
                });
                store.put(FeatureSequence::new(id.as_str(), FeatureKind::Embedding, frames)).unwrap();
                videos.push((VideoId::from(id.as_str()), IdentityId::from(format!("id{i}"))));
            }
        }
        (store, videos)
    }

    fn cfg() -> EmbedderConfig {
        let mut c = EmbedderConfig::new(4);
        c.heads = 2;
        c.attention_dim = 4;
        c.projection_dim = 3;
        c.window_len = 6;
        c.seed = 11;
        c
    }

    fn quick() -> Hyper {
        Hyper { lr: 1e-2, batch: 8, epochs: 5, windows_per_identity: 2, probe_size: 16, ..Hyper::default() }
    }

    #[test]
    fn single_identity_has_no_triplet() {
        let (store, videos) = toy_store(1, 3);
        assert!(matches!(train(&store, &videos, cfg(), &quick()), Err(TrainError::NoValidTriplet(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let (store, videos) = toy_store(3, 2);
        let a = train(&store, &videos, cfg(), &quick()).unwrap();
        let b = train(&store, &videos, cfg(), &quick()).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 5);
    }

    #[test]
    fn short_videos_are_skipped() {
        let (mut store, mut videos) = toy_store(2, 2);
        store.put(FeatureSequence::new("short", FeatureKind::Embedding, Array2::zeros((3, 4)))).unwrap();
        videos.push(("short".into(), "id0".into()));
        let out = train(&store, &videos, cfg(), &Hyper { epochs: 1, ..quick() }).unwrap();
        assert_eq!(out.skipped, vec![VideoId::from("short")]);
    }

    #[test]
    fn bad_hyper_rejected() {
        let (store, videos) = toy_store(2, 2);
        assert!(matches!(train(&store, &videos, cfg(), &Hyper { lr: 0.0, ..quick() }), Err(TrainError::Hyper(_))));
    }

    #[test]
    fn huge_learning_rate_reports_divergence_or_finishes_finite() {
        let (store, videos) = toy_store(3, 2);
        match train(&store, &videos, cfg(), &Hyper { lr: 1e300, ..quick() }) {
            Err(TrainError::Diverged { last_good, .. }) => assert!(last_good.values.iter().all(|v| v.is_finite())),
            Ok(out) => assert!(out.params.values.iter().all(|v| v.is_finite())),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
