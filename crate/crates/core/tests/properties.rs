use std::collections::{BTreeMap, BTreeSet};

use avfp_core::catalog::{Attribute, Catalog, Dataset, Generator};
use avfp_core::evaluation::{auc, delta_table, format_auc, roc, tenths, EvalReport};
use avfp_core::feature_store::{FeatureKind, FeatureSequence, FeatureStore, StoreReader};
use avfp_core::protocol::{generate_trials, make_split, Convention, Label, Side, SplitSizing};
use avfp_core::scoring::{make_windows, mean_similarity, score_pair, ScoringError, WindowEmbedder};
use avfp_core::synthbench::{synth_corpus, SynthConfig};
use ndarray::{Array1, Array2, ArrayView2};
use proptest::prelude::*;

/// Pair-by-pair Mann-Whitney count.
fn brute_auc(g: &[f64], i: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in g {
        for b in i {
            s += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    100.0 * s / (g.len() * i.len()) as f64
}

/// Scores on a coarse grid so that ties are common.
fn scores(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|k| k as f64 / 4.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_matches_pair_count(g in scores(40), i in scores(40)) {
        prop_assert!((auc(&g, &i).unwrap() - brute_auc(&g, &i)).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_maps(g in scores(30), i in scores(30)) {
        // Strictly increasing and exact on quarter-integers.
        let f = |x: &f64| x * x * x + 5.0 * x;
        let (g2, i2): (Vec<f64>, Vec<f64>) = (g.iter().map(f).collect(), i.iter().map(f).collect());
        prop_assert_eq!(auc(&g, &i).unwrap(), auc(&g2, &i2).unwrap());
    }

    #[test]
    fn auc_flips_with_sign_and_labels(g in scores(30), i in scores(30)) {
        let a = auc(&g, &i).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        prop_assert!((auc(&neg(&g), &neg(&i)).unwrap() - (100.0 - a)).abs() < 1e-9);
        prop_assert!((auc(&i, &g).unwrap() - (100.0 - a)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&a));
    }

    #[test]
    fn roc_trapezoid_is_auc(g in scores(30), i in scores(30)) {
        let pts = roc(&g, &i).unwrap();
        prop_assert_eq!(pts[0], (0.0, 0.0));
        prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        let mut area = 0.0;
        for w in pts.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
        }
        prop_assert!((100.0 * area - auc(&g, &i).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn window_count(frames in 0usize..400, f in 2usize..64, s in 1usize..64) {
        let w = make_windows("v".into(), frames, f, s).unwrap();
        let expected = if frames >= f { (frames - f) / s + 1 } else { 0 };
        prop_assert_eq!(w.len(), expected);
        prop_assert_eq!(w.skipped, expected == 0);
        for (k, start) in w.starts.iter().enumerate() {
            prop_assert_eq!(*start, k * s);
            prop_assert!(start + f <= frames);
        }
    }
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<Array1<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..6)
        .prop_filter("non-zero", |vs| vs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)))
        .prop_map(|vs| vs.into_iter().map(Array1::from).collect())
}

fn two_sets() -> impl Strategy<Value = (Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    (1usize..6).prop_flat_map(|d| (vectors(d), vectors(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mean_similarity_matches_double_loop((a, b) in two_sets()) {
        let mut sum = 0.0;
        for x in &a {
            for y in &b {
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
                let ny = y.iter().map(|q| q * q).sum::<f64>().sqrt();
                sum += dot / (nx * ny);
            }
        }
        let oracle = sum / (a.len() * b.len()) as f64;
        prop_assert!((mean_similarity(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }
}

/// Flattens a window into one vector.
struct Flatten;

impl WindowEmbedder for Flatten {
    fn model_id(&self) -> &str {
        "flatten"
    }

    fn embed(&self, window: ArrayView2<'_, f32>) -> Result<Array1<f64>, ScoringError> {
        Ok(window.iter().map(|&x| x as f64).collect())
    }
}

fn sequence(id: &'static str, dim: usize) -> impl Strategy<Value = FeatureSequence> {
    (1usize..40).prop_flat_map(move |t| {
        prop::collection::vec(-1.0f32..1.0, t * dim).prop_map(move |v| {
            FeatureSequence::new(id, FeatureKind::Embedding, Array2::from_shape_vec((t, dim), v).unwrap())
        })
    })
}

fn pair() -> impl Strategy<Value = (FeatureSequence, FeatureSequence, usize)> {
    (1usize..4).prop_flat_map(|d| (sequence("a", d), sequence("b", d), 2usize..9))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pair_score_symmetric_and_bounded((a, b, f) in pair()) {
        let short = a.len() < f || b.len() < f;
        let mut store = FeatureStore::new(FeatureKind::Embedding, a.dim()).unwrap();
        store.put(a).unwrap();
        store.put(b).unwrap();
        let ab = score_pair(&Flatten, &store, &"a".into(), &"b".into(), f);
        let ba = score_pair(&Flatten, &store, &"b".into(), &"a".into(), f);
        if short {
            prop_assert!(matches!(ab, Err(ScoringError::Unscorable(_))));
            prop_assert!(matches!(ba, Err(ScoringError::Unscorable(_))));
        } else {
            let (ab, ba) = (ab.unwrap(), ba.unwrap());
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}

fn store() -> impl Strategy<Value = FeatureStore> {
    (1usize..6, prop::collection::btree_set("[a-z0-9_-]{1,12}", 0..8)).prop_flat_map(|(dim, ids)| {
        let ids: Vec<String> = ids.into_iter().collect();
        let n = ids.len();
        (prop::collection::vec((1usize..30).prop_flat_map(move |t| prop::collection::vec(-1e6f32..1e6, t * dim)), n))
            .prop_map(move |data| {
                let mut s = FeatureStore::new(FeatureKind::Embedding, dim).unwrap();
                for (id, v) in ids.iter().zip(data) {
                    let t = v.len() / dim;
                    s.put(FeatureSequence::new(
                        id.as_str(),
                        FeatureKind::Embedding,
                        Array2::from_shape_vec((t, dim), v).unwrap(),
                    ))
                    .unwrap();
                }
                s
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn store_round_trip(s in store()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.avfs");
        s.write(&path).unwrap();
        let back = FeatureStore::read(&path).unwrap();
        prop_assert_eq!(back.dim(), s.dim());
        prop_assert_eq!(back.kind(), s.kind());
        prop_assert_eq!(back.len(), s.len());
        let reader = StoreReader::open(&path).unwrap();
        for seq in s.sequences() {
            let bits = |a: &Array2<f32>| a.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back.get(&seq.video_id).unwrap().frames), bits(&seq.frames));
            prop_assert_eq!(bits(&reader.get(&seq.video_id).unwrap().frames), bits(&seq.frames));
        }
    }
}

fn tiny_catalog(n: usize, vpi: usize, two_generators: bool, seed: u64) -> Catalog {
    let mut cfg = SynthConfig::new(n, vpi, (1, 2), 1, seed);
    cfg.cross_clips = vpi.min(2);
    if two_generators {
        cfg.generators = vec![Generator::Gaga, Generator::Huny];
    }
    synth_corpus(&cfg).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trials_match_pair_enumeration(
        n in 3usize..9, vpi in 1usize..4, two in any::<bool>(), seed in 0u64..1000, frac in 0.2f64..0.8,
        include in any::<bool>(),
    ) {
        let catalog = tiny_catalog(n, vpi, two, seed);
        let split = make_split(&catalog, &SplitSizing::Fraction(frac), &[], seed).unwrap().split;
        let convention = if include { Convention::IncludeIdentical } else { Convention::ExcludeIdentical };
        let list = generate_trials(&catalog, &split, convention).unwrap();

        let eval: Vec<_> = catalog.videos().iter().filter(|v| split.side(&v.target) == Some(Side::Evaluation)
            && split.side(&v.driver) == Some(Side::Evaluation)).collect();
        let mut expected = BTreeSet::new();
        for e in &eval {
            for t in &eval {
                let same_cell = e.dataset == t.dataset && e.generator == t.generator && e.target == t.target;
                if !same_cell || e.driver != e.target || (!include && e.video_id == t.video_id) {
                    continue;
                }
                let label = if t.driver == t.target { Label::Genuine } else { Label::Impostor };
                expected.insert((e.video_id.to_string(), t.video_id.to_string(), label));
            }
        }
        let got: BTreeSet<_> = list.trials.iter().map(|t| (t.enroll.to_string(), t.test.to_string(), t.label)).collect();
        prop_assert_eq!(got.len(), list.trials.len());
        prop_assert_eq!(got, expected);
        let ids: Vec<u64> = list.trials.iter().map(|t| t.trial_id).collect();
        prop_assert_eq!(ids, (0..list.trials.len() as u64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_disjoint_and_covering(n in 2usize..30, frac in 0.0f64..1.0, seed in any::<u64>(), stratify in any::<bool>()) {
        let catalog = tiny_catalog(n, 1, false, seed % 7);
        let attrs: &[Attribute] = if stratify { Attribute::ALL } else { &[] };
        let sizing = SplitSizing::Fraction(frac);
        let split = make_split(&catalog, &sizing, attrs, seed).unwrap().split;
        prop_assert!(split.development.is_disjoint(&split.evaluation));
        let all: BTreeSet<_> = catalog.identities().map(|r| r.id.clone()).collect();
        let union: BTreeSet<_> = split.development.union(&split.evaluation).cloned().collect();
        prop_assert_eq!(union, all);
        prop_assert_eq!(split.evaluation.len(), sizing.eval_count(Dataset::CremaD, n).unwrap());
        prop_assert!(!split.development.is_empty() && !split.evaluation.is_empty());
        prop_assert_eq!(make_split(&catalog, &sizing, attrs, seed).unwrap().split, split);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rendered_deltas_add_up(reference in 0.0f64..100.0, others in prop::collection::vec(0.0f64..100.0, 1..6)) {
        let report = |c: String, auc: f64| EvalReport { condition: c, model: "m".into(), auc, genuine_n: 1, impostor_n: 1 };
        let mut reports = vec![report("ref".into(), reference)];
        reports.extend(others.iter().enumerate().map(|(k, a)| report(format!("c{k}"), *a)));
        let names: Vec<String> = (0..others.len()).map(|k| format!("c{k}")).collect();
        let conds: Vec<&str> = names.iter().map(String::as_str).collect();
        let table = delta_table(&reports, "ref", "m", &conds).unwrap();
        prop_assert_eq!(table.rows.len(), others.len());
        let rendered = |s: &str| s.parse::<f64>().unwrap();
        for (row, a) in table.rows.iter().zip(&others) {
            prop_assert!((row.delta - (a - reference)).abs() < 1e-12);
            prop_assert_eq!(row.delta_tenths, tenths(*a) - tenths(reference));
            let sum = rendered(&format_auc(reference)) + rendered(&row.rendered());
            prop_assert!((sum - rendered(&format_auc(*a))).abs() < 1e-9);
        }
    }
}

#[test]
fn trial_counts_by_cell_are_consistent() {
    let catalog = tiny_catalog(8, 3, true, 5);
    let split = make_split(&catalog, &SplitSizing::Fraction(0.5), &[], 2).unwrap().split;
    let list = generate_trials(&catalog, &split, Convention::ExcludeIdentical).unwrap();
    let mut by_cell: BTreeMap<(Dataset, Generator), (u64, u64)> = BTreeMap::new();
    for t in &list.trials {
        let c = by_cell.entry((t.dataset, t.generator)).or_default();
        if t.label.is_genuine() {
            c.0 += 1
        } else {
            c.1 += 1
        }
    }
    for (k, c) in &list.counts {
        assert_eq!(by_cell[k], (c.genuine, c.impostor));
    }
    assert_eq!(by_cell.len(), list.counts.len());
}
