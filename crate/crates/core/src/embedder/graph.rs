//! Per-frame graph encoder over facial landmark points.
//!
//! Each layer averages a node's features with its neighbours' (the node
//! itself always counts once), applies a learned affine map and `tanh`.
//! The frame descriptor is the mean over nodes of the last layer.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::{EmbedderError, EmbedderParams, GraphLayerBlocks};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Undirected graph; self-loops and repeated edges are dropped.
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Result<Self, EmbedderError> {
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= nodes || j >= nodes {
                return Err(EmbedderError::Config(format!("edge ({i},{j}) out of range for {nodes} nodes")));
            }
            if i != j {
                set.insert((i.min(j), i.max(j)));
            }
        }
        let mut neighbors = vec![Vec::new(); nodes];
        for &(i, j) in &set {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        Ok(Self { nodes, edges: set.into_iter().collect(), neighbors })
    }

    /// Reads an `i,j` edge list (0-based). A non-numeric first line is
    /// taken as a header.
    pub fn from_csv(path: &Path, nodes: usize) -> Result<Self, EmbedderError> {
        let text = std::fs::read_to_string(path).map_err(|e| EmbedderError::Io { path: path.into(), source: e })?;
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parsed = line.split_once(',').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
            match parsed {
                Some(e) => edges.push(e),
                None if n == 0 => continue,
                None => {
                    return Err(EmbedderError::Format {
                        path: path.into(),
                        reason: format!("line {}: expected i,j", n + 1),
                    })
                }
            }
        }
        Self::new(nodes, &edges)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(n) = stack.pop() {
            for &m in &self.neighbors[n] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Degree-normalized aggregation including the node itself.
    pub fn aggregate(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(h.raw_dim());
        for i in 0..self.nodes {
            let mut row = out.row_mut(i);
            row += &h.row(i);
            for &j in &self.neighbors[i] {
                row += &h.row(j);
            }
            row /= (self.neighbors[i].len() + 1) as f64;
        }
        out
    }

    /// Adjoint of [`aggregate`](Self::aggregate): scatters gradients back.
    fn aggregate_adjoint(&self, d_out: ArrayView2<'_, f64>, mut d_in: ArrayViewMut2<'_, f64>) {
        for i in 0..self.nodes {
            let scale = 1.0 / (self.neighbors[i].len() + 1) as f64;
            let g = &d_out.row(i) * scale;
            d_in.row_mut(i).scaled_add(1.0, &g);
            for &j in &self.neighbors[i] {
                d_in.row_mut(j).scaled_add(1.0, &g);
            }
        }
    }
}

/// Activations of one frame through the encoder.
#[derive(Debug, Clone)]
pub(crate) struct FrameCache {
    /// Aggregated input to each layer (nodes x in_dim).
    aggregated: Vec<Array2<f64>>,
    /// Output of each layer after tanh (nodes x hidden).
    outputs: Vec<Array2<f64>>,
}

pub(crate) fn encode_frame(
    params: &EmbedderParams,
    graph: &AdjacencyGraph,
    nodes: ArrayView2<'_, f64>,
) -> (Array1<f64>, FrameCache) {
    let mut aggregated = Vec::with_capacity(params.layout.graph.len());
    let mut outputs = Vec::with_capacity(params.layout.graph.len());
    let mut h = nodes.to_owned();
    for GraphLayerBlocks { weight, bias } in &params.layout.graph {
        let m = graph.aggregate(h.view());
        let mut u = m.dot(&params.view(*weight));
        u += &params.vector(*bias);
        u.mapv_inplace(f64::tanh);
        aggregated.push(m);
        h = u.clone();
        outputs.push(u);
    }
    let descriptor = h.mean_axis(Axis(0)).expect("graph has nodes");
    (descriptor, FrameCache { aggregated, outputs })
}

pub(crate) fn backward_frame(
    params: &EmbedderParams,
    graph: &AdjacencyGraph,
    cache: &FrameCache,
    d_descriptor: ndarray::ArrayView1<'_, f64>,
    grad: &mut [f64],
) {
    let n = graph.nodes() as f64;
    let last = cache.outputs.last().expect("at least one layer");
    let mut d_h = Array2::from_shape_fn(last.raw_dim(), |(_, j)| d_descriptor[j] / n);
    for (l, GraphLayerBlocks { weight, bias }) in params.layout.graph.iter().enumerate().rev() {
        let out = &cache.outputs[l];
        let d_u = &d_h * &out.mapv(|v| 1.0 - v * v);
        let m = &cache.aggregated[l];
        {
            let mut gw = ArrayViewMut2::from_shape((weight.rows, weight.cols), &mut grad[weight.range()]).unwrap();
            gw += &m.t().dot(&d_u);
        }
        for (g, s) in grad[bias.range()].iter_mut().zip(d_u.sum_axis(Axis(0))) {
            *g += s;
        }
        if l > 0 {
            let d_m = d_u.dot(&params.view(*weight).t());
            let mut d_prev = Array2::zeros((graph.nodes(), weight.rows));
            graph.aggregate_adjoint(d_m.view(), d_prev.view_mut());
            d_h = d_prev;
        }
    }
}

/// Reshapes a flat frame (node-major coordinates) into nodes x features.
pub(crate) fn frame_nodes(frame: ndarray::ArrayView1<'_, f64>, nodes: usize) -> ArrayView2<'_, f64> {
    let per = frame.len() / nodes;
    frame.into_shape_with_order((nodes, per)).expect("frame length is a multiple of nodes")
}

/// Descriptor of one frame given as a nodes x coordinates matrix.
pub fn graph_encode(
    params: &EmbedderParams,
    frame_landmarks: ArrayView2<'_, f64>,
    graph: &AdjacencyGraph,
) -> Result<Array1<f64>, EmbedderError> {
    let cfg = params.config.graph_encoder.as_ref().ok_or(EmbedderError::NoGraphEncoder)?;
    if frame_landmarks.nrows() != graph.nodes() || graph.nodes() != cfg.nodes {
        return Err(EmbedderError::NodeCount { expected: cfg.nodes, found: frame_landmarks.nrows() });
    }
    let per = params.config.input_dim / cfg.nodes;
    if frame_landmarks.ncols() != per {
        return Err(EmbedderError::Shape {
            expected: format!("{} x {per}", cfg.nodes),
            found: format!("{} x {}", frame_landmarks.nrows(), frame_landmarks.ncols()),
        });
    }
    Ok(encode_frame(params, graph, frame_landmarks).0)
}
