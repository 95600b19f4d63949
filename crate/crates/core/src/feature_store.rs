//! Per-frame feature sequences keyed by video, with a compact binary
//! on-disk format.
//!
//! Layout of a store file (all integers little-endian):
//!
//! ```text
//! header : "AVFS" | version u32 | kind u8 | dim u32 | count u64 | fps f32
//! record : id_len u32 | id bytes (UTF-8) | frames u32 | frames*dim f32 (row-major)
//! ```
//!
//! A sidecar `<file>.idx` CSV (`video_id,offset,frames`) maps every id to
//! the byte offset of its record so [`StoreReader`] can fetch one sequence
//! without scanning the file.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::VideoId;

const MAGIC: &[u8; 4] = b"AVFS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 8 + 4;

/// Landmark points per frame in the landmark representation.
pub const LANDMARK_POINTS: usize = 109;
/// Frame rate of both source corpora.
pub const DEFAULT_FPS: f32 = 30.0;
/// Variance floor applied to constant feature dimensions.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Landmarks,
    Embedding,
}

impl FeatureKind {
    fn code(self) -> u8 {
        match self {
            FeatureKind::Landmarks => 0,
            FeatureKind::Embedding => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(FeatureKind::Landmarks),
            1 => Some(FeatureKind::Embedding),
            _ => None,
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "landmarks" => Ok(FeatureKind::Landmarks),
            "embedding" => Ok(FeatureKind::Embedding),
            other => Err(format!("unknown feature kind {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("dimension mismatch for {video_id}: store has {expected}, sequence has {found}")]
    Dimension { video_id: String, expected: usize, found: usize },
    #[error("kind mismatch for {0}")]
    Kind(String),
    #[error("duplicate video id {0}")]
    Duplicate(String),
    #[error("missing video id {0}")]
    Missing(String),
    #[error("non-finite value in {video_id} at frame {frame}, column {column}")]
    NonFinite { video_id: String, frame: usize, column: usize },
    #[error("empty sequence for {0}")]
    Empty(String),
    #[error("landmark stores need dimension 218 (109 points x 2), got {0}")]
    LandmarkDim(usize),
    #[error("corrupt store file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("normalization source set is empty")]
    EmptyStatsSource,
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> StoreError {
    StoreError::Format { path: path.display().to_string(), reason: reason.into() }
}

/// Per-frame features of one video, stored in 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: VideoId,
    pub kind: FeatureKind,
    /// T x D, row-major.
    pub frames: Array2<f32>,
    pub fps: f32,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<VideoId>, kind: FeatureKind, frames: Array2<f32>) -> Self {
        Self { video_id: video_id.into(), kind, frames, fps: DEFAULT_FPS }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Frames widened to 64-bit for computation.
    pub fn to_f64(&self) -> Array2<f64> {
        self.frames.mapv(f64::from)
    }

    fn check_finite(&self) -> Result<(), StoreError> {
        for ((frame, column), v) in self.frames.indexed_iter() {
            if !v.is_finite() {
                return Err(StoreError::NonFinite { video_id: self.video_id.to_string(), frame, column });
            }
        }
        Ok(())
    }
}

/// In-memory feature store. Insertion order is preserved and is the order
/// records are written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    kind: FeatureKind,
    dim: usize,
    fps: f32,
    records: Vec<FeatureSequence>,
    index: HashMap<VideoId, usize>,
}

impl FeatureStore {
    pub fn new(kind: FeatureKind, dim: usize) -> Result<Self, StoreError> {
        if kind == FeatureKind::Landmarks && dim != 2 * LANDMARK_POINTS {
            return Err(StoreError::LandmarkDim(dim));
        }
        Ok(Self { kind, dim, fps: DEFAULT_FPS, records: Vec::new(), index: HashMap::new() })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, id: &VideoId) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &VideoId> + '_ {
        self.records.iter().map(|r| &r.video_id)
    }

    pub fn sequences(&self) -> &[FeatureSequence] {
        &self.records
    }

    pub fn put(&mut self, seq: FeatureSequence) -> Result<(), StoreError> {
        if seq.kind != self.kind {
            return Err(StoreError::Kind(seq.video_id.to_string()));
        }
        if seq.dim() != self.dim {
            return Err(StoreError::Dimension {
                video_id: seq.video_id.to_string(),
                expected: self.dim,
                found: seq.dim(),
            });
        }
        if seq.is_empty() {
            return Err(StoreError::Empty(seq.video_id.to_string()));
        }
        if self.index.contains_key(&seq.video_id) {
            return Err(StoreError::Duplicate(seq.video_id.to_string()));
        }
        seq.check_finite()?;
        self.index.insert(seq.video_id.clone(), self.records.len());
        self.records.push(seq);
        Ok(())
    }

    pub fn get(&self, id: &VideoId) -> Result<&FeatureSequence, StoreError> {
        self.index.get(id).map(|&i| &self.records[i]).ok_or_else(|| StoreError::Missing(id.to_string()))
    }

    /// Same store restricted to `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&VideoId) -> bool) -> FeatureStore {
        let mut out = self.clone_empty();
        for r in self.records.iter().filter(|r| keep(&r.video_id)) {
            out.index.insert(r.video_id.clone(), out.records.len());
            out.records.push(r.clone());
        }
        out
    }

    pub(crate) fn clone_empty(&self) -> FeatureStore {
        FeatureStore { kind: self.kind, dim: self.dim, fps: self.fps, records: Vec::new(), index: HashMap::new() }
    }

    /// Writes the store and its sidecar index.
    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut w = BufWriter::new(file);
        let mut offsets = Vec::with_capacity(self.records.len());
        let put = |w: &mut BufWriter<fs::File>, bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));

        put(&mut w, MAGIC)?;
        put(&mut w, &VERSION.to_le_bytes())?;
        put(&mut w, &[self.kind.code()])?;
        put(&mut w, &(self.dim as u32).to_le_bytes())?;
        put(&mut w, &(self.records.len() as u64).to_le_bytes())?;
        put(&mut w, &self.fps.to_le_bytes())?;

        let mut offset = HEADER_LEN as u64;
        for r in &self.records {
            offsets.push(offset);
            let id = r.video_id.as_str().as_bytes();
            put(&mut w, &(id.len() as u32).to_le_bytes())?;
            put(&mut w, id)?;
            put(&mut w, &(r.len() as u32).to_le_bytes())?;
            for v in r.frames.iter() {
                put(&mut w, &v.to_le_bytes())?;
            }
            offset += 4 + id.len() as u64 + 4 + 4 * (r.len() * self.dim) as u64;
        }
        w.flush().map_err(|e| io_err(path, e))?;

        let idx_path = index_path(path);
        let mut idx = csv::Writer::from_path(&idx_path).map_err(|e| format_err(&idx_path, e.to_string()))?;
        idx.write_record(["video_id", "offset", "frames"]).map_err(|e| format_err(&idx_path, e.to_string()))?;
        for (r, off) in self.records.iter().zip(offsets) {
            idx.write_record([r.video_id.as_str(), &off.to_string(), &r.len().to_string()])
                .map_err(|e| format_err(&idx_path, e.to_string()))?;
        }
        idx.flush().map_err(|e| io_err(&idx_path, e))?;
        Ok(())
    }

    /// Reads a whole store file into memory.
    pub fn read(path: &Path) -> Result<FeatureStore, StoreError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let header = Header::parse(path, &bytes)?;
        let mut store = FeatureStore::new(header.kind, header.dim)?;
        store.fps = header.fps;
        let mut pos = HEADER_LEN;
        for _ in 0..header.count {
            let (seq, next) = decode_record(path, &bytes, pos, &header)?;
            store.put(seq)?;
            pos = next;
        }
        if pos != bytes.len() {
            return Err(format_err(path, "trailing bytes after last record"));
        }
        Ok(store)
    }
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

struct Header {
    kind: FeatureKind,
    dim: usize,
    count: u64,
    fps: f32,
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().unwrap())
}

impl Header {
    fn parse(path: &Path, bytes: &[u8]) -> Result<Header, StoreError> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(format_err(path, "missing AVFS magic"));
        }
        let version = le_u32(&bytes[4..]);
        if version != VERSION {
            return Err(format_err(path, format!("unsupported version {version}")));
        }
        let kind = FeatureKind::from_code(bytes[8]).ok_or_else(|| format_err(path, "unknown feature kind"))?;
        let dim = le_u32(&bytes[9..]) as usize;
        let count = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
        let fps = f32::from_le_bytes(bytes[21..25].try_into().unwrap());
        Ok(Header { kind, dim, count, fps })
    }
}

fn decode_record(path: &Path, bytes: &[u8], pos: usize, h: &Header) -> Result<(FeatureSequence, usize), StoreError> {
    let need = |end: usize| {
        if end > bytes.len() {
            Err(format_err(path, format!("record at offset {pos} is truncated")))
        } else {
            Ok(())
        }
    };
    need(pos + 4)?;
    let id_len = le_u32(&bytes[pos..]) as usize;
    let id_start = pos + 4;
    need(id_start + id_len + 4)?;
    let id = std::str::from_utf8(&bytes[id_start..id_start + id_len])
        .map_err(|_| format_err(path, format!("record at offset {pos} has a non UTF-8 id")))?;
    let t = le_u32(&bytes[id_start + id_len..]) as usize;
    let data = id_start + id_len + 4;
    let end = data + 4 * t * h.dim;
    need(end)?;
    let values: Vec<f32> =
        bytes[data..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let frames = Array2::from_shape_vec((t, h.dim), values).map_err(|e| format_err(path, e.to_string()))?;
    Ok((FeatureSequence { video_id: id.into(), kind: h.kind, frames, fps: h.fps }, end))
}

/// Read-only view of a store file that resolves ids through the sidecar
/// index. Holds the file bytes; `get` decodes one record on demand and is
/// safe to call from many threads at once.
pub struct StoreReader {
    path: PathBuf,
    bytes: Vec<u8>,
    header: Header,
    offsets: HashMap<VideoId, u64>,
}

impl StoreReader {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let header = Header::parse(path, &bytes)?;
        let idx_path = index_path(path);
        let mut idx = csv::Reader::from_path(&idx_path).map_err(|e| format_err(&idx_path, e.to_string()))?;
        let mut offsets = HashMap::new();
        let mut last_end = HEADER_LEN as u64;
        let mut entries = Vec::new();
        for rec in idx.records() {
            let rec = rec.map_err(|e| format_err(&idx_path, e.to_string()))?;
            let id = rec.get(0).ok_or_else(|| format_err(&idx_path, "bad id"))?;
            let offset: u64 =
                rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| format_err(&idx_path, "bad offset"))?;
            let frames: u64 =
                rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| format_err(&idx_path, "bad frames"))?;
            entries.push((id.to_string(), offset, frames));
        }
        entries.sort_by_key(|e| e.1);
        for (id, offset, frames) in entries {
            if offset < last_end {
                return Err(format_err(&idx_path, format!("overlapping record for {id}")));
            }
            last_end = offset + 8 + id.len() as u64 + 4 * frames * header.dim as u64;
            if offsets.insert(VideoId::from(id.as_str()), offset).is_some() {
                return Err(format_err(&idx_path, format!("duplicate id {id}")));
            }
        }
        if offsets.len() as u64 != header.count {
            return Err(format_err(&idx_path, "index entry count differs from store header"));
        }
        Ok(Self { path: path.to_path_buf(), bytes, header, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn get(&self, id: &VideoId) -> Result<FeatureSequence, StoreError> {
        let &off = self.offsets.get(id).ok_or_else(|| StoreError::Missing(id.to_string()))?;
        let (seq, _) = decode_record(&self.path, &self.bytes, off as usize, &self.header)?;
        if &seq.video_id != id {
            return Err(format_err(&self.path, format!("index points {id} at record {}", seq.video_id)));
        }
        Ok(seq)
    }
}

/// Per-dimension standardization fitted on development videos.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose variance was below the floor.
    pub floored: Vec<usize>,
}

impl NormalizationParams {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim], floored: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, frames: ArrayView2<'_, f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        (&frames - &mean) / &std
    }

    pub fn apply_f32(&self, frames: ArrayView2<'_, f32>) -> Array2<f64> {
        self.apply(frames.mapv(f64::from).view())
    }
}

/// Fits mean and standard deviation over every frame of `source` videos.
pub fn normalize<'a>(
    store: &FeatureStore,
    source: impl IntoIterator<Item = &'a VideoId>,
) -> Result<NormalizationParams, StoreError> {
    let d = store.dim();
    let mut sum = vec![0.0f64; d];
    let mut n = 0usize;
    let seqs: Vec<&FeatureSequence> = source.into_iter().map(|id| store.get(id)).collect::<Result<_, _>>()?;
    if seqs.is_empty() {
        return Err(StoreError::EmptyStatsSource);
    }
    for s in &seqs {
        for row in s.frames.axis_iter(Axis(0)) {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += f64::from(*v);
            }
        }
        n += s.len();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0f64; d];
    for s in &seqs {
        for row in s.frames.axis_iter(Axis(0)) {
            for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let c = f64::from(*v) - m;
                *acc += c * c;
            }
        }
    }
    let mut floored = Vec::new();
    let std = sq
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let var = s / n as f64;
            if var < VARIANCE_FLOOR {
                floored.push(j);
                VARIANCE_FLOOR.sqrt()
            } else {
                var.sqrt()
            }
        })
        .collect();
    Ok(NormalizationParams { mean, std, floored })
}

/// Parses one per-video CSV (one row per frame) produced by an external
/// extractor. A leading non-numeric row is treated as a header.
pub fn import_csv(path: &Path, video_id: impl Into<VideoId>, kind: FeatureKind) -> Result<FeatureSequence, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f32>, _> = line.split(',').map(|c| c.trim().parse::<f32>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if n == 0 => continue,
            Err(e) => return Err(format_err(path, format!("line {}: {e}", n + 1))),
        }
    }
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if let Some((n, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(format_err(path, format!("frame {n} has {} columns, expected {d}", r.len())));
    }
    let t = rows.len();
    let frames = Array2::from_shape_vec((t, d), rows.into_iter().flatten().collect())
        .map_err(|e| format_err(path, e.to_string()))?;
    Ok(FeatureSequence::new(video_id, kind, frames))
}
