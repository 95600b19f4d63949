//! Window-based verification scoring: split each video into overlapping
//! fixed-length windows, embed every window, and average the cosine
//! similarity over all enrollment x test window pairs.

mod table;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use thiserror::Error;

use crate::catalog::VideoId;
use crate::embedder::{EmbedderError, EmbedderParams};
use crate::feature_store::{FeatureStore, StoreError};

pub use table::{fuse, fuse_tables, read_scores, score_trials, write_scores, ScoreRow, ScoreTable, SCORES_HEADER};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("window length {0} must be at least 2")]
    WindowLength(usize),
    #[error("stride must be at least 1")]
    Stride,
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("vectors differ in length: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("video {0} is shorter than one window")]
    Unscorable(VideoId),
    #[error("nothing to fuse")]
    EmptyFusion,
    #[error("cannot fuse scores of different trials ({0} and {1})")]
    MixedTrials(u64, u64),
    #[error("score tables disagree: {0}")]
    TableMismatch(String),
    #[error(transparent)]
    Embedder(#[from] EmbedderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

/// Start frames of the complete windows of one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSet {
    pub video_id: VideoId,
    pub starts: Vec<usize>,
    pub window_len: usize,
    pub stride: usize,
    /// True when the video is shorter than one window.
    pub skipped: bool,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

/// Windows `[start, start + f)` with starts `0, s, 2s, ...`; trailing frames
/// that do not fill a window are dropped.
pub fn make_windows(video_id: VideoId, frames: usize, f: usize, s: usize) -> Result<WindowSet, ScoringError> {
    if f < 2 {
        return Err(ScoringError::WindowLength(f));
    }
    if s == 0 {
        return Err(ScoringError::Stride);
    }
    let starts: Vec<usize> = if frames >= f { (0..=(frames - f) / s).map(|k| k * s).collect() } else { Vec::new() };
    Ok(WindowSet { video_id, skipped: starts.is_empty(), starts, window_len: f, stride: s })
}

/// Default stride: half a window.
pub fn default_stride(f: usize) -> usize {
    (f / 2).max(1)
}

pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64, ScoringError> {
    if u.len() != v.len() {
        return Err(ScoringError::Dimension(u.len(), v.len()));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ScoringError::ZeroVector);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Mean cosine similarity over the full `X x Y` matrix of window
/// embeddings. The similarities are summed in sorted order, so swapping the
/// two sides gives a bit-identical result.
pub fn mean_similarity(a: &[Array1<f64>], b: &[Array1<f64>]) -> Result<f64, ScoringError> {
    if a.is_empty() || b.is_empty() {
        return Err(ScoringError::Unscorable(VideoId::from(if a.is_empty() { "enrollment" } else { "test" })));
    }
    let mut sims = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            sims.push(cosine(x.view(), y.view())?);
        }
    }
    sims.sort_by(f64::total_cmp);
    Ok(pairwise_sum(&sims) / sims.len() as f64)
}

/// Anything that maps one raw window (`F x D`, as stored) to an embedding.
pub trait WindowEmbedder: Sync {
    /// Cache key component; distinct models must return distinct ids.
    fn model_id(&self) -> &str;
    fn embed(&self, window: ArrayView2<'_, f32>) -> Result<Array1<f64>, ScoringError>;
}

/// A trained embedder under a model name.
#[derive(Debug, Clone)]
pub struct NamedEmbedder {
    pub name: String,
    pub params: EmbedderParams,
}

impl WindowEmbedder for NamedEmbedder {
    fn model_id(&self) -> &str {
        &self.name
    }

    fn embed(&self, window: ArrayView2<'_, f32>) -> Result<Array1<f64>, ScoringError> {
        Ok(self.params.embed_raw(window)?)
    }
}

type CacheKey = (VideoId, String, usize);
type Windows = Option<Arc<Vec<Array1<f64>>>>;

/// Window embeddings keyed by (video, model, window length). `None` marks a
/// video shorter than one window.
#[derive(Default)]
pub struct EmbeddingCache {
    map: Mutex<HashMap<CacheKey, Windows>>,
    computed: Mutex<usize>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of videos whose windows were embedded (cache misses).
    pub fn computed(&self) -> usize {
        *self.computed.lock().expect("cache lock")
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embeddings of every complete window of `video`.
    pub fn get(
        &self,
        embedder: &dyn WindowEmbedder,
        store: &FeatureStore,
        video: &VideoId,
        f: usize,
    ) -> Result<Option<Arc<Vec<Array1<f64>>>>, ScoringError> {
        let key = (video.clone(), embedder.model_id().to_string(), f);
        if let Some(hit) = self.map.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let seq = store.get(video)?;
        let windows = make_windows(video.clone(), seq.len(), f, default_stride(f))?;
        let value = if windows.skipped {
            None
        } else {
            let embs = windows
                .starts
                .iter()
                .map(|&s| embedder.embed(seq.frames.slice(ndarray::s![s..s + f, ..])))
                .collect::<Result<Vec<_>, _>>()?;
            Some(Arc::new(embs))
        };
        *self.computed.lock().expect("cache lock") += 1;
        self.map.lock().expect("cache lock").insert(key, value.clone());
        Ok(value)
    }

    /// Embeds every listed video in parallel. Videos missing from the store
    /// are returned rather than treated as errors.
    pub fn warm(
        &self,
        embedder: &dyn WindowEmbedder,
        store: &FeatureStore,
        videos: &BTreeSet<VideoId>,
        f: usize,
    ) -> Result<Vec<VideoId>, ScoringError> {
        let missing: Vec<VideoId> = videos.iter().filter(|v| !store.contains(v)).cloned().collect();
        let present: Vec<&VideoId> = videos.iter().filter(|v| store.contains(v)).collect();
        present.par_iter().try_for_each(|v| self.get(embedder, store, v, f).map(|_| ()))?;
        Ok(missing)
    }
}

/// Verification score of one (enrollment, test) pair.
pub fn score_pair(
    embedder: &dyn WindowEmbedder,
    store: &FeatureStore,
    enroll: &VideoId,
    test: &VideoId,
    f: usize,
) -> Result<f64, ScoringError> {
    score_pair_cached(&EmbeddingCache::new(), embedder, store, enroll, test, f)
}

pub(crate) fn score_pair_cached(
    cache: &EmbeddingCache,
    embedder: &dyn WindowEmbedder,
    store: &FeatureStore,
    enroll: &VideoId,
    test: &VideoId,
    f: usize,
) -> Result<f64, ScoringError> {
    let a = cache.get(embedder, store, enroll, f)?.ok_or_else(|| ScoringError::Unscorable(enroll.clone()))?;
    let b = cache.get(embedder, store, test, f)?.ok_or_else(|| ScoringError::Unscorable(test.clone()))?;
    mean_similarity(&a, &b)
}
