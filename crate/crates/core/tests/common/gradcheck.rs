//! Analytic gradients against central finite differences of a loss
//! recomputed only through the public forward pass and triplet loss.

use avfp_core::embedder::{
    backward, forward, jitter, triplet_loss, EmbedderConfig, EmbedderParams, GraphEncoderConfig, Triplet,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
/// Denominator floor for the relative error. Central differences of a loss
/// near 1 carry about 1e-11 of rounding noise at this step, so coordinates
/// whose true gradient is zero need an absolute scale; 1e-4 turns the
/// 1e-5 relative bound into a 1e-9 absolute bound for those.
const FLOOR: f64 = 1e-4;
const MARGIN: f64 = 0.2;

struct Case {
    params: EmbedderParams,
    windows: Vec<[Array2<f64>; 3]>,
}

fn oracle_loss(p: &EmbedderParams, windows: &[[Array2<f64>; 3]]) -> f64 {
    let total: f64 = windows
        .iter()
        .map(|[a, pos, n]| {
            let za = forward(p, a.view()).unwrap();
            let zp = forward(p, pos.view()).unwrap();
            let zn = forward(p, n.view()).unwrap();
            triplet_loss(za.view(), zp.view(), zn.view(), MARGIN).unwrap()
        })
        .sum();
    total / windows.len() as f64
}

/// Pre-hinge value of each triplet; kept away from zero so the loss is
/// smooth within the finite-difference stencil.
fn hinge_values(p: &EmbedderParams, windows: &[[Array2<f64>; 3]]) -> Vec<f64> {
    windows
        .iter()
        .map(|[a, pos, n]| {
            let za = forward(p, a.view()).unwrap();
            let zp = forward(p, pos.view()).unwrap();
            let zn = forward(p, n.view()).unwrap();
            let d = |x: &ndarray::Array1<f64>, y: &ndarray::Array1<f64>| (x - y).mapv(|v| v * v).sum();
            d(&za, &zp) - d(&za, &zn) + MARGIN
        })
        .collect()
}

fn random_config(rng: &mut ChaCha8Rng, graph: bool) -> EmbedderConfig {
    let heads = rng.random_range(1..=3);
    let mut c = if graph {
        let nodes = rng.random_range(2..=5);
        let per = rng.random_range(1..=2);
        let mut c = EmbedderConfig::new(nodes * per);
        let edges = (0..rng.random_range(0..=2 * nodes))
            .map(|_| (rng.random_range(0..nodes), rng.random_range(0..nodes)))
            .collect();
        c.graph_encoder = Some(GraphEncoderConfig {
            layers: rng.random_range(1..=2),
            hidden_dim: rng.random_range(3..=5),
            nodes,
            edges,
        });
        c
    } else {
        EmbedderConfig::new(rng.random_range(3..=6))
    };
    c.heads = heads;
    c.attention_dim = heads * rng.random_range(1..=3);
    c.projection_dim = rng.random_range(1..c.frame_dim());
    c.window_len = rng.random_range(2..=5);
    c.seed = rng.random();
    c
}

fn random_case(rng: &mut ChaCha8Rng, graph: bool) -> Case {
    loop {
        let cfg = random_config(rng, graph);
        let params = jitter(&EmbedderParams::init(cfg.clone()).unwrap(), 0.3, rng);
        let batch = rng.random_range(1..=3);
        let windows: Vec<[Array2<f64>; 3]> = (0..batch)
            .map(|_| {
                std::array::from_fn(|_| {
                    Array2::from_shape_fn((cfg.window_len, cfg.input_dim), |_| rng.random_range(-1.5..1.5))
                })
            })
            .collect();
        let hinge = hinge_values(&params, &windows);
        // At least one active triplet, and no triplet near the kink.
        if hinge.iter().any(|v| *v > 0.0) && hinge.iter().all(|v| v.abs() > 1e-3) {
            return Case { params, windows };
        }
    }
}

fn max_relative_error(case: &Case) -> f64 {
    let batch: Vec<Triplet<'_>> = case
        .windows
        .iter()
        .map(|[a, p, n]| Triplet { anchor: a.view(), positive: p.view(), negative: n.view() })
        .collect();
    let (loss, grad) = backward(&case.params, &batch, MARGIN).unwrap();
    assert!((loss - oracle_loss(&case.params, &case.windows)).abs() < 1e-12);
    let mut worst: f64 = 0.0;
    for i in 0..case.params.len() {
        let mut plus = case.params.values.clone();
        plus[i] += H;
        let mut minus = case.params.values.clone();
        minus[i] -= H;
        let lp = oracle_loss(&case.params.with_values(plus).unwrap(), &case.windows);
        let lm = oracle_loss(&case.params.with_values(minus).unwrap(), &case.windows);
        let numeric = (lp - lm) / (2.0 * H);
        let err = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Largest relative error over `n` random configurations.
pub fn worst_error(seed: u64, graph: bool, n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| max_relative_error(&random_case(&mut rng, graph))).fold(0.0, f64::max)
}
