//! Window embedder: multi-head temporal attention pooling over per-frame
//! features, a projection head and final L2 normalization, with an
//! optional per-frame graph encoder for landmark input.
//!
//! All learnable weights live in one flat `Vec<f64>` described by a
//! [`Layout`]; gradients use the same layout, which keeps the optimizer,
//! checkpointing and finite-difference checks trivial.

mod checkpoint;
mod graph;
mod loss;
mod net;
mod optim;
mod train;

use std::path::PathBuf;

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature_store::NormalizationParams;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{graph_encode, AdjacencyGraph};
pub use loss::{mine_semi_hard, squared_distance, triplet_loss, TripletIndex};
pub use net::{backward, batch_loss_and_grad, forward, forward_cached, Forward, Triplet};
pub use optim::Adam;
pub use train::{train, EpochLog, Hyper, TrainError, TrainOutput};

#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("non-finite value in {layer}")]
    NonFinite { layer: &'static str },
    #[error("graph has {expected} nodes, frame has {found}")]
    NodeCount { expected: usize, found: usize },
    #[error("embedding dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("embedder has no graph encoder")]
    NoGraphEncoder,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Per-frame graph encoder settings. The adjacency is carried inline so a
/// checkpoint is self-contained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEncoderConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Per-frame input dimension D.
    pub input_dim: usize,
    pub heads: usize,
    pub attention_dim: usize,
    /// Output embedding dimension d.
    pub projection_dim: usize,
    /// Frames per window F.
    pub window_len: usize,
    #[serde(default)]
    pub graph_encoder: Option<GraphEncoderConfig>,
    pub seed: u64,
}

impl EmbedderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            heads: 4,
            attention_dim: 64,
            projection_dim: (input_dim / 2).clamp(1, 64),
            window_len: 32,
            graph_encoder: None,
            seed: 0,
        }
    }

    /// Dimension of the per-frame vectors that enter attention pooling.
    pub fn frame_dim(&self) -> usize {
        self.graph_encoder.as_ref().map_or(self.input_dim, |g| g.hidden_dim)
    }

    pub fn head_dim(&self) -> usize {
        self.attention_dim / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<(), EmbedderError> {
        let bad = |m: String| Err(EmbedderError::Config(m));
        if self.heads == 0 || self.attention_dim == 0 || !self.attention_dim.is_multiple_of(self.heads) {
            return bad(format!("heads {} must divide attention_dim {}", self.heads, self.attention_dim));
        }
        if self.window_len < 2 {
            return bad(format!("window_len {} must be at least 2", self.window_len));
        }
        if self.projection_dim == 0 || self.projection_dim >= self.frame_dim() {
            return bad(format!(
                "projection_dim {} must be in 1..{} (pooled frame dimension)",
                self.projection_dim,
                self.frame_dim()
            ));
        }
        if let Some(g) = &self.graph_encoder {
            if g.layers == 0 || g.hidden_dim == 0 || g.nodes == 0 {
                return bad("graph encoder needs layers, hidden_dim and nodes > 0".into());
            }
            if !self.input_dim.is_multiple_of(g.nodes) {
                return bad(format!("input_dim {} is not a multiple of {} nodes", self.input_dim, g.nodes));
            }
            if let Some(&(i, j)) = g.edges.iter().find(|(i, j)| *i >= g.nodes || *j >= g.nodes) {
                return bad(format!("edge ({i},{j}) out of range for {} nodes", g.nodes));
            }
        }
        Ok(())
    }
}

/// A contiguous matrix (or vector, `cols == 1`) inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphLayerBlocks {
    pub weight: Block,
    pub bias: Block,
}

/// Offsets of every parameter group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub graph: Vec<GraphLayerBlocks>,
    /// One query vector per head (H x head_dim).
    pub queries: Block,
    pub key_w: Block,
    pub key_b: Block,
    pub value_w: Block,
    pub value_b: Block,
    /// Maps concatenated head outputs back to the frame dimension.
    pub out_w: Block,
    pub out_b: Block,
    pub proj_w: Block,
    pub proj_b: Block,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &EmbedderConfig) -> Self {
        let mut offset = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let mut graph = Vec::new();
        if let Some(g) = &cfg.graph_encoder {
            let mut in_dim = cfg.input_dim / g.nodes;
            for _ in 0..g.layers {
                graph.push(GraphLayerBlocks { weight: block(in_dim, g.hidden_dim), bias: block(1, g.hidden_dim) });
                in_dim = g.hidden_dim;
            }
        }
        let p = cfg.frame_dim();
        let a = cfg.attention_dim;
        let queries = block(cfg.heads, cfg.head_dim());
        let key_w = block(p, a);
        let key_b = block(1, a);
        let value_w = block(p, a);
        let value_b = block(1, a);
        let out_w = block(a, p);
        let out_b = block(1, p);
        let proj_w = block(p, cfg.projection_dim);
        let proj_b = block(1, cfg.projection_dim);
        Self { graph, queries, key_w, key_b, value_w, value_b, out_w, out_b, proj_w, proj_b, total: offset }
    }

    /// Named parameter groups, in storage order.
    pub fn groups(&self) -> Vec<(String, Block)> {
        let mut out = Vec::new();
        for (i, l) in self.graph.iter().enumerate() {
            out.push((format!("graph{i}.weight"), l.weight));
            out.push((format!("graph{i}.bias"), l.bias));
        }
        out.extend([
            ("attention.queries".to_string(), self.queries),
            ("attention.key_w".to_string(), self.key_w),
            ("attention.key_b".to_string(), self.key_b),
            ("attention.value_w".to_string(), self.value_w),
            ("attention.value_b".to_string(), self.value_b),
            ("attention.out_w".to_string(), self.out_w),
            ("attention.out_b".to_string(), self.out_b),
            ("projection.weight".to_string(), self.proj_w),
            ("projection.bias".to_string(), self.proj_b),
        ]);
        out
    }
}

/// All learnable weights plus the input standardization they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub config: EmbedderConfig,
    pub values: Vec<f64>,
    pub normalization: Option<NormalizationParams>,
    layout: Layout,
    graph: Option<AdjacencyGraph>,
}

impl EmbedderParams {
    /// Seeded initialization: Glorot-uniform matrices, zero biases.
    pub fn init(config: EmbedderConfig) -> Result<Self, EmbedderError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = crate::seed::rng(config.seed, &[crate::seed::label("embedder-init")]);
        let mut values = vec![0.0; layout.total];
        for (name, b) in layout.groups() {
            if b.rows == 1 && !name.ends_with("queries") {
                continue;
            }
            let limit = if name.ends_with("queries") {
                1.0 / (b.cols as f64).sqrt()
            } else {
                (6.0 / (b.rows + b.cols) as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            for v in &mut values[b.range()] {
                *v = dist.sample(&mut rng);
            }
        }
        Self::from_values(config, values, None)
    }

    pub fn from_values(
        config: EmbedderConfig,
        values: Vec<f64>,
        normalization: Option<NormalizationParams>,
    ) -> Result<Self, EmbedderError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.total {
            return Err(EmbedderError::Shape {
                expected: format!("{} parameters", layout.total),
                found: format!("{} parameters", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedderError::NonFinite { layer: "parameters" });
        }
        if let Some(n) = &normalization {
            if n.dim() != config.input_dim {
                return Err(EmbedderError::Dimension(n.dim(), config.input_dim));
            }
        }
        let graph = config.graph_encoder.as_ref().map(|g| AdjacencyGraph::new(g.nodes, &g.edges)).transpose()?;
        Ok(Self { config, values, normalization, layout, graph })
    }

    /// Same architecture with a different parameter vector.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, EmbedderError> {
        Self::from_values(self.config.clone(), values, self.normalization.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn graph(&self) -> Option<&AdjacencyGraph> {
        self.graph.as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn view(&self, b: Block) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((b.rows, b.cols), &self.values[b.range()]).expect("layout block in range")
    }

    pub(crate) fn vector(&self, b: Block) -> ndarray::ArrayView1<'_, f64> {
        ndarray::ArrayView1::from(&self.values[b.range()])
    }

    /// Embeds one raw window (stored features), standardizing it first.
    pub fn embed_raw(&self, window: ArrayView2<'_, f32>) -> Result<Array1<f64>, EmbedderError> {
        let x = match &self.normalization {
            Some(n) => n.apply_f32(window),
            None => window.mapv(f64::from),
        };
        forward(self, x.view())
    }
}

/// Perturbs every parameter with uniform noise; used by tests to move away
/// from the symmetric initialization.
pub fn jitter(params: &EmbedderParams, scale: f64, rng: &mut impl Rng) -> EmbedderParams {
    let values = params.values.iter().map(|v| v + rng.random_range(-scale..=scale)).collect();
    params.with_values(values).expect("jittered values stay finite")
}
