//! Synthetic corpora with identity-specific motion signatures, plus the
//! generator and dataset shifts used to probe robustness.
//!
//! Every identity owns a small bank of sinusoids (frequencies in the
//! blink and articulation range) mixed into feature space by an
//! identity-specific matrix. A video replays its driver's signature with
//! fresh phases and Gaussian noise; cross reenactments replay the driver
//! of the clip, so appearance never reaches the features.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    build_cross_assignments, AgeRange, AvatarVideo, Catalog, CatalogError, Dataset, Ethnicity, Gender, Generator,
    IdentityId, IdentityRecord, VideoId, TARGETS_PER_DRIVER,
};
use crate::feature_store::{FeatureKind, FeatureSequence, FeatureStore, StoreError, DEFAULT_FPS};
use crate::seed;

/// Sinusoids per latent channel.
pub const SINUSOIDS: usize = 4;
/// Frequency band of the sinusoids, in Hz.
pub const FREQ_BAND: (f64, f64) = (0.5, 4.0);
/// Smallest allowed distance between the frequency banks of two identities.
const MIN_SIGNATURE_DISTANCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic corpus: {0}")]
    Invalid(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Corpus parameters. Everything beyond the first five fields has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub videos_per_id: usize,
    /// Inclusive range of frame counts.
    pub frames: (usize, usize),
    pub dim: usize,
    pub seed: u64,
    /// Latent motion channels per identity.
    pub latents: usize,
    /// Stationary standard deviation of the nuisance motion.
    pub noise: f64,
    /// Frame-to-frame correlation of the nuisance motion (AR(1) coefficient).
    pub noise_correlation: f64,
    /// Scale of the identity-specific resting offset.
    pub offset: f64,
    pub dataset: Dataset,
    /// Identity key prefix; defaults to a letter derived from the dataset.
    pub id_prefix: Option<String>,
    pub generators: Vec<Generator>,
    /// Shift applied to every video of a generator, on top of the shared motion.
    pub generator_shifts: BTreeMap<Generator, ShiftTransform>,
    /// Clips per driver re-enacted onto other targets.
    pub cross_clips: usize,
    /// Shift applied to every video after any generator shift, for example
    /// to make a second dataset differ from the first.
    pub shift: Option<ShiftTransform>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            videos_per_id: 10,
            frames: (64, 100),
            dim: 32,
            seed: 0,
            latents: 6,
            noise: 0.6,
            noise_correlation: 0.0,
            offset: 0.3,
            dataset: Dataset::CremaD,
            id_prefix: None,
            generators: vec![Generator::Gaga],
            generator_shifts: BTreeMap::new(),
            cross_clips: 2,
            shift: None,
        }
    }
}

impl SynthConfig {
    pub fn new(n_identities: usize, videos_per_id: usize, frames: (usize, usize), dim: usize, seed: u64) -> Self {
        Self { n_identities, videos_per_id, frames, dim, seed, ..Self::default() }
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SynthError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.n_identities < 2 {
            return bad(format!("{} identities; at least 2 needed", self.n_identities));
        }
        if self.videos_per_id == 0 || self.dim == 0 || self.latents == 0 {
            return bad("videos_per_id, dim and latents must be positive".into());
        }
        if self.frames.0 == 0 || self.frames.0 > self.frames.1 {
            return bad(format!("frame range {:?} is empty", self.frames));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.offset >= 0.0 && self.offset.is_finite()) {
            return bad("noise and offset must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return bad(format!("noise_correlation {} outside [0, 1)", self.noise_correlation));
        }
        if self.generators.is_empty() {
            return bad("no generators".into());
        }
        if self.cross_clips > self.videos_per_id {
            return bad(format!("cross_clips {} exceeds videos_per_id {}", self.cross_clips, self.videos_per_id));
        }
        for (g, s) in &self.generator_shifts {
            if !self.generators.contains(g) {
                return bad(format!("shift given for generator {g} which is not generated"));
            }
            s.validate()?;
        }
        if let Some(s) = &self.shift {
            s.validate()?;
        }
        Ok(())
    }

    fn prefix(&self) -> String {
        self.id_prefix.clone().unwrap_or_else(|| match self.dataset {
            Dataset::CremaD => "c".into(),
            Dataset::Ravdess => "r".into(),
        })
    }
}

/// Motion signature of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySignature {
    /// Latents x sinusoids, in Hz.
    pub frequencies: Array2<f64>,
    pub amplitudes: Array2<f64>,
    /// Base phases; each video adds its own offsets.
    pub phases: Array2<f64>,
    /// Feature dim x latents.
    pub mixing: Array2<f64>,
    pub offset: Array1<f64>,
    pub noise: f64,
}

impl IdentitySignature {
    fn sample(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let shape = (cfg.latents, SINUSOIDS);
        let freq = Uniform::new_inclusive(FREQ_BAND.0, FREQ_BAND.1).expect("valid band");
        let amp = Uniform::new(0.3, 1.0).expect("valid range");
        let phase = Uniform::new(0.0, TAU).expect("valid range");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let frequencies = Array2::from_shape_fn(shape, |_| freq.sample(rng));
        let amplitudes = Array2::from_shape_fn(shape, |_| amp.sample(rng));
        let phases = Array2::from_shape_fn(shape, |_| phase.sample(rng));
        let scale = 1.0 / (cfg.latents as f64).sqrt();
        let mixing = Array2::from_shape_fn((cfg.dim, cfg.latents), |_| normal.sample(rng) * scale);
        let offset = Array1::from_shape_fn(cfg.dim, |_| normal.sample(rng) * cfg.offset);
        Self { frequencies, amplitudes, phases, mixing, offset, noise: cfg.noise }
    }

    /// Distance between frequency banks, the parameter that carries the
    /// temporal identity cue.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.frequencies - &other.frequencies).mapv(|d| d * d).sum().sqrt()
    }

    /// Noise-free trajectory of `t` frames with per-sinusoid phase offsets.
    pub fn trajectory(&self, t: usize, phase_offsets: &Array2<f64>) -> Array2<f64> {
        let (latents, k) = self.frequencies.dim();
        let fps = DEFAULT_FPS as f64;
        let mut latent = Array2::<f64>::zeros((t, latents));
        for ((frame, l), v) in latent.indexed_iter_mut() {
            let time = frame as f64 / fps;
            *v = (0..k)
                .map(|j| {
                    let arg = TAU * self.frequencies[[l, j]] * time + self.phases[[l, j]] + phase_offsets[[l, j]];
                    self.amplitudes[[l, j]] * arg.sin()
                })
                .sum();
        }
        latent.dot(&self.mixing.t()) + &self.offset
    }
}

/// Draws one signature per identity, redrawing any whose frequency bank
/// falls within the minimum distance of an earlier one.
pub fn signatures(cfg: &SynthConfig) -> Result<Vec<IdentitySignature>, SynthError> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed, &[seed::label("signature")]);
    let mut out: Vec<IdentitySignature> = Vec::with_capacity(cfg.n_identities);
    let mut attempts = 0;
    while out.len() < cfg.n_identities {
        attempts += 1;
        if attempts > 1000 * cfg.n_identities {
            return Err(SynthError::Invalid("could not draw distinct signatures".into()));
        }
        let s = IdentitySignature::sample(cfg, &mut rng);
        if out.iter().all(|o| o.distance(&s) >= MIN_SIGNATURE_DISTANCE) {
            out.push(s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    GeneratorShift,
    DatasetShift,
}

/// A feature-level perturbation applied identically to every video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftTransform {
    pub kind: ShiftKind,
    /// Centered moving-average width in frames; 0 and 1 leave frames alone.
    #[serde(default)]
    pub smoothing: usize,
    /// Root-mean-square size of the style bias; its direction comes from `style_seed`.
    #[serde(default)]
    pub bias: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Resample every video to a length drawn from this inclusive range.
    #[serde(default)]
    pub frames: Option<(usize, usize)>,
    /// Fresh per-frame noise added last.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub style_seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ShiftTransform {
    pub fn identity(kind: ShiftKind) -> Self {
        Self { kind, smoothing: 0, bias: 0.0, amplitude: 1.0, frames: None, noise: 0.0, style_seed: 0 }
    }

    /// Smoothing plus a fixed style bias.
    pub fn generator(smoothing: usize, bias: f64, style_seed: u64) -> Self {
        Self { smoothing, bias, style_seed, ..Self::identity(ShiftKind::GeneratorShift) }
    }

    /// Amplitude rescale plus a new frame-count distribution.
    pub fn dataset(amplitude: f64, frames: (usize, usize)) -> Self {
        Self { amplitude, frames: Some(frames), ..Self::identity(ShiftKind::DatasetShift) }
    }

    /// Mild smoothing, a small style bias and rendering noise. The noise is
    /// what reliably costs accuracy: smoothing alone also removes nuisance
    /// noise, and a uniform bias can even help.
    pub fn standard_generator(style_seed: u64) -> Self {
        Self::generator(3, 0.2, style_seed).with_noise(0.8)
    }

    /// Damped motion, longer clips and some recording noise.
    pub fn standard_dataset() -> Self {
        Self::dataset(0.8, (95, 120)).with_noise(0.5)
    }

    pub fn with_noise(self, noise: f64) -> Self {
        Self { noise, ..self }
    }

    pub fn is_identity(&self) -> bool {
        self.smoothing <= 1 && self.bias == 0.0 && self.amplitude == 1.0 && self.frames.is_none() && self.noise == 0.0
    }

    fn validate(&self) -> Result<(), SynthError> {
        let finite = self.bias.is_finite() && self.amplitude.is_finite() && self.noise.is_finite();
        if !finite || self.noise < 0.0 {
            return Err(SynthError::Invalid("shift parameters must be finite, noise non-negative".into()));
        }
        if let Some((lo, hi)) = self.frames {
            if lo < 2 || lo > hi {
                return Err(SynthError::Invalid(format!("resampling range ({lo}, {hi}) is empty or below 2 frames")));
            }
        }
        Ok(())
    }

    fn style(&self, dim: usize) -> Array1<f64> {
        let mut rng = seed::rng(self.style_seed, &[seed::label("style")]);
        let normal = Normal::new(0.0, 1.0_f64).expect("unit normal");
        let v: Array1<f64> = Array1::from_shape_fn(dim, |_| normal.sample(&mut rng));
        let norm = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
        v * (self.bias * (dim as f64).sqrt() / norm)
    }

    /// Applies the transform to one T x D block. `rng` drives the random
    /// parts (resampled length and noise).
    fn apply_frames(&self, frames: &Array2<f64>, style: &Array1<f64>, rng: &mut impl Rng) -> Array2<f64> {
        let mut x = frames.clone();
        if self.amplitude != 1.0 {
            x.mapv_inplace(|v| v * self.amplitude);
        }
        if let Some((lo, hi)) = self.frames {
            let t = rng.random_range(lo..=hi);
            x = resample(&x, t);
        }
        if self.smoothing > 1 {
            x = moving_average(&x, self.smoothing);
        }
        if self.bias != 0.0 {
            x += style;
        }
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).expect("checked noise");
            x.mapv_inplace(|v| v + normal.sample(rng));
        }
        x
    }
}

/// Gaussian AR(1) noise with stationary standard deviation `sigma`, one
/// independent process per column.
pub fn ar1_noise(shape: (usize, usize), sigma: f64, rho: f64, rng: &mut impl Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let innovation = sigma * (1.0 - rho * rho).sqrt();
    let mut e = Array2::<f64>::zeros(shape);
    for t in 0..shape.0 {
        for d in 0..shape.1 {
            let z = normal.sample(rng);
            e[[t, d]] = if t == 0 { sigma * z } else { rho * e[[t - 1, d]] + innovation * z };
        }
    }
    e
}

/// Centered moving average; windows are truncated at the ends.
pub fn moving_average(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let t = x.nrows();
    let before = (width - 1) / 2;
    let after = width - 1 - before;
    Array2::from_shape_fn(x.dim(), |(i, d)| {
        let lo = i.saturating_sub(before);
        let hi = (i + after).min(t - 1);
        (lo..=hi).map(|j| x[[j, d]]).sum::<f64>() / (hi - lo + 1) as f64
    })
}

/// Linear resampling to `t` frames spanning the same time interval.
pub fn resample(x: &Array2<f64>, t: usize) -> Array2<f64> {
    let n = x.nrows();
    if n == t {
        return x.clone();
    }
    Array2::from_shape_fn((t, x.ncols()), |(i, d)| {
        if n == 1 || t == 1 {
            return x[[0, d]];
        }
        let pos = i as f64 * (n - 1) as f64 / (t - 1) as f64;
        let j = (pos.floor() as usize).min(n - 2);
        let w = pos - j as f64;
        x[[j, d]] * (1.0 - w) + x[[j + 1, d]] * w
    })
}

/// Applies `transform` to every sequence. Deterministic given `seed`; the
/// smoothing and style bias do not depend on it, only the random draws do.
pub fn apply_shift(store: &FeatureStore, transform: &ShiftTransform, seed: u64) -> Result<FeatureStore, SynthError> {
    transform.validate()?;
    let mut out = FeatureStore::new(store.kind(), store.dim())?;
    if transform.is_identity() {
        for s in store.sequences() {
            out.put(s.clone())?;
        }
        return Ok(out);
    }
    let style = transform.style(store.dim());
    let shifted: Vec<FeatureSequence> = store
        .sequences()
        .par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed, &[seed::label("shift"), seed::label(s.video_id.as_str())]);
            let x = transform.apply_frames(&s.to_f64(), &style, &mut rng);
            FeatureSequence { frames: x.mapv(|v| v as f32), ..s.clone() }
        })
        .collect();
    for s in shifted {
        out.put(s)?;
    }
    Ok(out)
}

fn self_video_id(generator: Generator, id: &IdentityId, clip: u32) -> VideoId {
    format!("{generator}-{id}-{clip:03}").into()
}

/// Builds the catalog and features of a synthetic corpus. Identities get
/// soft-biometrics cycled over the known values so every subgroup is
/// populated and statistically identical.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<(Catalog, FeatureStore), SynthError> {
    let sigs = signatures(cfg)?;
    let prefix = cfg.prefix();
    let identities: Vec<IdentityRecord> = (0..cfg.n_identities)
        .map(|i| IdentityRecord {
            id: format!("{prefix}{i:03}").into(),
            dataset: cfg.dataset,
            gender: [Gender::Female, Gender::Male][i % 2],
            ethnicity: [Ethnicity::AfricanAmerican, Ethnicity::Asian, Ethnicity::Caucasian, Ethnicity::Hispanic][i % 4],
            age_range: [AgeRange::From20To30, AgeRange::From31To45, AgeRange::From46To60][i % 3],
        })
        .collect();
    let mut videos = Vec::new();
    for rec in &identities {
        for &g in &cfg.generators {
            for k in 0..cfg.videos_per_id as u32 {
                videos.push(AvatarVideo {
                    video_id: self_video_id(g, &rec.id, k),
                    dataset: cfg.dataset,
                    generator: g,
                    target: rec.id.clone(),
                    driver: rec.id.clone(),
                    source_clip: k,
                });
            }
        }
    }
    let base = Catalog::new(identities.clone(), videos, Vec::new())?;
    let catalog = if cfg.cross_clips > 0 {
        let targets = TARGETS_PER_DRIVER.min(cfg.n_identities - 1);
        build_cross_assignments(&base, targets, cfg.cross_clips, seed::derive(cfg.seed, &[seed::label("cross")]))?
    } else {
        base
    };

    let index: BTreeMap<&IdentityId, usize> = identities.iter().enumerate().map(|(i, r)| (&r.id, i)).collect();
    let styles: BTreeMap<Generator, Array1<f64>> =
        cfg.generator_shifts.iter().map(|(g, s)| (*g, s.style(cfg.dim))).collect();
    let corpus_style = cfg.shift.as_ref().map(|s| s.style(cfg.dim));
    let sequences: Vec<FeatureSequence> = catalog
        .videos()
        .par_iter()
        .map(|v| {
            let sig = &sigs[index[&v.driver]];
            // Length and phases belong to the driving clip; noise to the video.
            let clip = [seed::label("clip"), seed::label(v.driver.as_str()), v.source_clip as u64];
            let mut clip_rng = seed::rng(cfg.seed, &clip);
            let t = clip_rng.random_range(cfg.frames.0..=cfg.frames.1);
            let phase = Uniform::new(0.0, TAU).expect("valid range");
            let offsets = Array2::from_shape_fn(sig.frequencies.dim(), |_| phase.sample(&mut clip_rng));
            let mut x = sig.trajectory(t, &offsets);
            let mut rng = seed::rng(cfg.seed, &[seed::label("video"), seed::label(v.video_id.as_str())]);
            if sig.noise > 0.0 {
                x += &ar1_noise(x.dim(), sig.noise, cfg.noise_correlation, &mut rng);
            }
            if let Some(shift) = cfg.generator_shifts.get(&v.generator) {
                x = shift.apply_frames(&x, &styles[&v.generator], &mut rng);
            }
            if let (Some(shift), Some(style)) = (&cfg.shift, &corpus_style) {
                x = shift.apply_frames(&x, style, &mut rng);
            }
            FeatureSequence::new(v.video_id.clone(), FeatureKind::Embedding, x.mapv(|a| a as f32))
        })
        .collect();
    let mut store = FeatureStore::new(FeatureKind::Embedding, cfg.dim)?;
    for s in sequences {
        store.put(s)?;
    }
    Ok((catalog, store))
}

/// Concatenates corpora with disjoint identities and videos, for example
/// one per dataset.
pub fn merge(parts: Vec<(Catalog, FeatureStore)>) -> Result<(Catalog, FeatureStore), SynthError> {
    let mut ids = Vec::new();
    let mut videos = Vec::new();
    let mut assignments = Vec::new();
    let mut store: Option<FeatureStore> = None;
    for (c, s) in parts {
        let (i, v, a) = c.into_parts();
        ids.extend(i);
        videos.extend(v);
        assignments.extend(a);
        match &mut store {
            None => store = Some(s),
            Some(out) => {
                for seq in s.sequences() {
                    out.put(seq.clone())?;
                }
            }
        }
    }
    let store = store.ok_or_else(|| SynthError::Invalid("nothing to merge".into()))?;
    Ok((Catalog::new(ids, videos, assignments)?, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig::new(10, 4, (40, 60), 8, 5)
    }

    #[test]
    fn corpus_shape() {
        let cfg = SynthConfig::new(20, 10, (64, 64), 32, 1);
        let (cat, store) = synth_corpus(&cfg).unwrap();
        assert_eq!(cat.videos().iter().filter(|v| v.is_self()).count(), 200);
        assert_eq!(store.len(), cat.videos().len());
        assert!(store.sequences().iter().all(|s| s.len() == 64 && s.dim() == 32));
        assert_eq!(cat.videos().iter().filter(|v| !v.is_self()).count(), 20 * 8 * 2);
    }

    #[test]
    fn deterministic() {
        let (_, a) = synth_corpus(&small()).unwrap();
        let (_, b) = synth_corpus(&small()).unwrap();
        assert_eq!(a.sequences(), b.sequences());
        let (_, c) = synth_corpus(&SynthConfig { seed: 6, ..small() }).unwrap();
        assert_ne!(a.sequences(), c.sequences());
    }

    #[test]
    fn noiseless_cross_video_replays_driver_clip() {
        let cfg = SynthConfig { noise: 0.0, ..small() };
        let (cat, store) = synth_corpus(&cfg).unwrap();
        let cross = cat.videos().iter().find(|v| !v.is_self()).unwrap();
        let own = self_video_id(cross.generator, &cross.driver, cross.source_clip);
        assert_eq!(store.get(&cross.video_id).unwrap().frames, store.get(&own).unwrap().frames);
    }

    #[test]
    fn rejects_invalid_sizes() {
        assert!(synth_corpus(&SynthConfig { n_identities: 1, ..small() }).is_err());
        assert!(synth_corpus(&SynthConfig { frames: (10, 5), ..small() }).is_err());
        assert!(synth_corpus(&SynthConfig { dim: 0, ..small() }).is_err());
    }

    #[test]
    fn signatures_are_distinct() {
        let s = signatures(&SynthConfig::new(30, 2, (10, 10), 4, 3)).unwrap();
        for i in 0..s.len() {
            for j in 0..i {
                assert!(s[i].distance(&s[j]) >= MIN_SIGNATURE_DISTANCE);
            }
        }
    }

    #[test]
    fn identity_shift_is_exact() {
        let (_, store) = synth_corpus(&small()).unwrap();
        let out = apply_shift(&store, &ShiftTransform::identity(ShiftKind::GeneratorShift), 9).unwrap();
        assert_eq!(out.sequences(), store.sequences());
    }

    fn column_variance(x: &Array2<f64>) -> Vec<f64> {
        x.columns().into_iter().map(|c| c.var(0.0)).collect()
    }

    #[test]
    fn smoothing_reduces_variance() {
        let (_, store) = synth_corpus(&small()).unwrap();
        let out = apply_shift(&store, &ShiftTransform::generator(5, 0.0, 0), 0).unwrap();
        for (a, b) in store.sequences().iter().zip(out.sequences()) {
            for (va, vb) in column_variance(&a.to_f64()).iter().zip(column_variance(&b.to_f64())) {
                assert!(vb < *va);
            }
        }
    }

    #[test]
    fn seeds_change_noise_only() {
        let (_, store) = synth_corpus(&small()).unwrap();
        let t = ShiftTransform::generator(5, 0.5, 3);
        let noisy = t.clone().with_noise(0.1);
        let clean = apply_shift(&store, &t, 1).unwrap();
        assert_eq!(clean.sequences(), apply_shift(&store, &t, 2).unwrap().sequences());
        let a = apply_shift(&store, &noisy, 1).unwrap();
        let b = apply_shift(&store, &noisy, 2).unwrap();
        assert_ne!(a.sequences(), b.sequences());
        // Same smoothing and bias underneath: the noisy outputs differ from
        // the clean one by noise of the requested scale only.
        let d = (&a.sequences()[0].to_f64() - &clean.sequences()[0].to_f64()).mapv(f64::abs);
        assert!(d.iter().all(|v| *v < 1.0));
    }

    #[test]
    fn dataset_shift_changes_lengths() {
        let (_, store) = synth_corpus(&small()).unwrap();
        let out = apply_shift(&store, &ShiftTransform::dataset(1.3, (95, 120)), 4).unwrap();
        assert!(out.sequences().iter().all(|s| (95..=120).contains(&s.len()) && s.dim() == 8));
        assert!(out.sequences().iter().all(|s| s.frames.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn resample_keeps_endpoints() {
        let x = Array2::from_shape_fn((5, 2), |(i, d)| (i * 10 + d) as f64);
        let r = resample(&x, 9);
        assert_eq!(r.row(0), x.row(0));
        assert_eq!(r.row(8), x.row(4));
        assert_eq!(r[[1, 0]], 5.0);
    }

    #[test]
    fn merged_datasets() {
        let a = synth_corpus(&small()).unwrap();
        let b = synth_corpus(&SynthConfig { dataset: Dataset::Ravdess, ..small() }).unwrap();
        let (cat, store) = merge(vec![a, b]).unwrap();
        assert_eq!(cat.datasets().len(), 2);
        assert_eq!(store.len(), cat.videos().len());
    }
}
