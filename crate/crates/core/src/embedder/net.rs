//! Forward pass and hand-derived backward pass of the window embedder.
//!
//! Row-vector convention throughout: a window `X` is `F x P`, keys are
//! `K = X Wk + bk`, values `V = tanh(X Wv + bv)`. Head `h` scores frame
//! `t` with `q_h . K_t[h] / sqrt(head_dim)`, softmax over frames gives the
//! attention weights, and the head output is the weighted sum of value
//! rows. Concatenated heads are mapped back to `P` dimensions (`Z`), then
//! projected to `d` dimensions and L2-normalized.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;

use super::graph::{backward_frame, encode_frame, frame_nodes, FrameCache};
use super::loss::{squared_distance, TripletIndex};
use super::{EmbedderError, EmbedderParams};

/// Every intermediate of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    graph: Option<Vec<FrameCache>>,
    /// Per-frame vectors entering attention (F x P).
    pub frames: Array2<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    /// Attention weights, one row per head (H x F).
    pub attention: Array2<f64>,
    pooled: Array1<f64>,
    /// Pooled sequence representation in frame space.
    pub summary: Array1<f64>,
    norm: f64,
    /// Unit-norm embedding.
    pub embedding: Array1<f64>,
}

fn check_finite(a: impl IntoIterator<Item = f64>, layer: &'static str) -> Result<(), EmbedderError> {
    if a.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(EmbedderError::NonFinite { layer })
    }
}

pub fn forward_cached(params: &EmbedderParams, window: ArrayView2<'_, f64>) -> Result<Forward, EmbedderError> {
    let cfg = &params.config;
    if window.nrows() != cfg.window_len || window.ncols() != cfg.input_dim {
        return Err(EmbedderError::Shape {
            expected: format!("{} x {}", cfg.window_len, cfg.input_dim),
            found: format!("{} x {}", window.nrows(), window.ncols()),
        });
    }
    check_finite(window.iter().copied(), "input")?;
    let l = params.layout();

    let (frames, graph) = match params.graph() {
        Some(g) => {
            let mut caches = Vec::with_capacity(window.nrows());
            let mut rows = Array2::zeros((window.nrows(), cfg.frame_dim()));
            for (t, frame) in window.axis_iter(Axis(0)).enumerate() {
                let (desc, cache) = encode_frame(params, g, frame_nodes(frame, g.nodes()));
                rows.row_mut(t).assign(&desc);
                caches.push(cache);
            }
            check_finite(rows.iter().copied(), "graph encoder")?;
            (rows, Some(caches))
        }
        None => (window.to_owned(), None),
    };

    let mut keys = frames.dot(&params.view(l.key_w));
    keys += &params.vector(l.key_b);
    let mut values = frames.dot(&params.view(l.value_w));
    values += &params.vector(l.value_b);
    values.mapv_inplace(f64::tanh);

    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let queries = params.view(l.queries);
    let mut attention = Array2::zeros((cfg.heads, frames.nrows()));
    let mut pooled = Array1::zeros(cfg.attention_dim);
    for h in 0..cfg.heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let mut scores = keys.slice(cols).dot(&queries.row(h)) * scale;
        let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        scores.mapv_inplace(|v| (v - max).exp());
        let total = scores.sum();
        scores /= total;
        pooled.slice_mut(s![h * hd..(h + 1) * hd]).assign(&scores.dot(&values.slice(cols)));
        attention.row_mut(h).assign(&scores);
    }
    check_finite(attention.iter().copied(), "attention")?;

    let mut summary = pooled.dot(&params.view(l.out_w));
    summary += &params.vector(l.out_b);
    let mut projected = summary.dot(&params.view(l.proj_w));
    projected += &params.vector(l.proj_b);
    check_finite(projected.iter().copied(), "projection")?;
    let norm = projected.dot(&projected).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedderError::NonFinite { layer: "l2 normalization" });
    }
    let embedding = &projected / norm;

    Ok(Forward { graph, frames, keys, values, attention, pooled, summary, norm, embedding })
}

/// Unit-norm embedding of one standardized window.
pub fn forward(params: &EmbedderParams, window: ArrayView2<'_, f64>) -> Result<Array1<f64>, EmbedderError> {
    forward_cached(params, window).map(|f| f.embedding)
}

fn grad_block<'a>(grad: &'a mut [f64], b: super::Block) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((b.rows, b.cols), &mut grad[b.range()]).expect("layout block in range")
}

fn add_vec(grad: &mut [f64], b: super::Block, v: ArrayView1<'_, f64>) {
    for (g, x) in grad[b.range()].iter_mut().zip(v) {
        *g += x;
    }
}

/// Accumulates `d loss / d params` into `grad` given `d loss / d embedding`.
pub(crate) fn backward_window(
    params: &EmbedderParams,
    fwd: &Forward,
    d_embedding: ArrayView1<'_, f64>,
    grad: &mut [f64],
) {
    let cfg = &params.config;
    let l = params.layout();
    let z = &fwd.embedding;

    // z = y / |y|
    let d_proj = (&d_embedding - &(z * z.dot(&d_embedding))) / fwd.norm;
    add_vec(grad, l.proj_b, d_proj.view());
    grad_block(grad, l.proj_w).scaled_add(1.0, &outer(fwd.summary.view(), d_proj.view()));
    let d_summary = params.view(l.proj_w).dot(&d_proj);

    add_vec(grad, l.out_b, d_summary.view());
    grad_block(grad, l.out_w).scaled_add(1.0, &outer(fwd.pooled.view(), d_summary.view()));
    let d_pooled = params.view(l.out_w).dot(&d_summary);

    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let queries = params.view(l.queries);
    let mut d_keys = Array2::zeros(fwd.keys.raw_dim());
    let mut d_values = Array2::zeros(fwd.values.raw_dim());
    {
        let mut d_queries = grad_block(grad, l.queries);
        for h in 0..cfg.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let alpha = fwd.attention.row(h);
            let d_out = d_pooled.slice(s![h * hd..(h + 1) * hd]);
            // o = sum_t alpha_t v_t
            d_values.slice_mut(cols).scaled_add(1.0, &outer(alpha, d_out));
            let d_alpha = fwd.values.slice(cols).dot(&d_out);
            let mean = alpha.dot(&d_alpha);
            let d_scores = (&d_alpha - mean) * alpha * scale;
            d_queries.row_mut(h).scaled_add(1.0, &fwd.keys.slice(cols).t().dot(&d_scores));
            d_keys.slice_mut(cols).scaled_add(1.0, &outer(d_scores.view(), queries.row(h)));
        }
    }

    let d_value_pre = &d_values * &fwd.values.mapv(|v| 1.0 - v * v);
    grad_block(grad, l.value_w).scaled_add(1.0, &fwd.frames.t().dot(&d_value_pre));
    add_vec(grad, l.value_b, d_value_pre.sum_axis(Axis(0)).view());
    grad_block(grad, l.key_w).scaled_add(1.0, &fwd.frames.t().dot(&d_keys));
    add_vec(grad, l.key_b, d_keys.sum_axis(Axis(0)).view());

    if let (Some(caches), Some(g)) = (&fwd.graph, params.graph()) {
        let d_frames = d_value_pre.dot(&params.view(l.value_w).t()) + d_keys.dot(&params.view(l.key_w).t());
        for (t, cache) in caches.iter().enumerate() {
            backward_frame(params, g, cache, d_frames.row(t), grad);
        }
    }
}

fn outer(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Mean triplet loss over `triplets` (indices into `windows`) and its
/// gradient. Each distinct window is forwarded once; per-window gradient
/// contributions are computed in parallel and reduced in window order so
/// the result does not depend on thread scheduling.
pub fn batch_loss_and_grad(
    params: &EmbedderParams,
    windows: &[ArrayView2<'_, f64>],
    triplets: &[TripletIndex],
    margin: f64,
) -> Result<(f64, Vec<f64>, usize), EmbedderError> {
    if triplets.is_empty() {
        return Ok((0.0, vec![0.0; params.len()], 0));
    }
    let fwds = forward_many(params, windows)?;
    loss_and_grad_from(params, &fwds, triplets, margin)
}

/// Forward passes over many windows, in parallel, results in input order.
pub(crate) fn forward_many(
    params: &EmbedderParams,
    windows: &[ArrayView2<'_, f64>],
) -> Result<Vec<Forward>, EmbedderError> {
    windows.par_iter().map(|w| forward_cached(params, *w)).collect()
}

/// Loss and gradient given cached forward passes.
pub(crate) fn loss_and_grad_from(
    params: &EmbedderParams,
    fwds: &[Forward],
    triplets: &[TripletIndex],
    margin: f64,
) -> Result<(f64, Vec<f64>, usize), EmbedderError> {
    let mut grad = vec![0.0; params.len()];
    if triplets.is_empty() {
        return Ok((0.0, grad, 0));
    }
    let dim = params.config.projection_dim;
    let mut d_emb = vec![Array1::<f64>::zeros(dim); fwds.len()];
    let inv = 1.0 / triplets.len() as f64;
    let mut loss = 0.0;
    let mut active = 0;
    for t in triplets {
        let a = &fwds[t.anchor].embedding;
        let p = &fwds[t.positive].embedding;
        let n = &fwds[t.negative].embedding;
        let value = squared_distance(a.view(), p.view()) - squared_distance(a.view(), n.view()) + margin;
        if value <= 0.0 {
            continue;
        }
        active += 1;
        loss += value * inv;
        // d/da = 2(n - p), d/dp = -2(a - p), d/dn = 2(a - n)
        d_emb[t.anchor].scaled_add(2.0 * inv, &(n - p));
        d_emb[t.positive].scaled_add(-2.0 * inv, &(a - p));
        d_emb[t.negative].scaled_add(2.0 * inv, &(a - n));
    }
    if active == 0 {
        return Ok((0.0, grad, 0));
    }
    let parts: Vec<Option<Vec<f64>>> = fwds
        .par_iter()
        .zip(d_emb.par_iter())
        .map(|(f, d)| {
            if d.iter().all(|v| *v == 0.0) {
                return None;
            }
            let mut g = vec![0.0; params.len()];
            backward_window(params, f, d.view(), &mut g);
            Some(g)
        })
        .collect();
    for part in parts.into_iter().flatten() {
        for (acc, v) in grad.iter_mut().zip(part) {
            *acc += v;
        }
    }
    check_finite(grad.iter().copied(), "gradient")?;
    Ok((loss, grad, active))
}

/// One (anchor, positive, negative) triple of standardized windows.
#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor: ArrayView2<'a, f64>,
    pub positive: ArrayView2<'a, f64>,
    pub negative: ArrayView2<'a, f64>,
}

/// Mean triplet loss over a minibatch and its analytic gradient with
/// respect to every parameter.
pub fn backward(params: &EmbedderParams, batch: &[Triplet<'_>], margin: f64) -> Result<(f64, Vec<f64>), EmbedderError> {
    let mut windows = Vec::with_capacity(3 * batch.len());
    let mut idx = Vec::with_capacity(batch.len());
    for t in batch {
        let base = windows.len();
        windows.extend([t.anchor, t.positive, t.negative]);
        idx.push(TripletIndex { anchor: base, positive: base + 1, negative: base + 2 });
    }
    let (loss, grad, _) = batch_loss_and_grad(params, &windows, &idx, margin)?;
    Ok((loss, grad))
}
