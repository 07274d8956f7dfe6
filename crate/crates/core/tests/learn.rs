mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{compile_sql, labels, synthetic};
use mbaqp_core::learn::{cluster_rows, fit_leaf, split_columns};
use mbaqp_core::{
    exact_query, exec_probability, learn, learn_independence_baseline, metrics, probability, Column, ColumnMeta,
    Condition, ConditionSet, Interval, LearnError, LearnParams, Node, Table,
};

fn all_rows(t: &Table) -> Vec<u32> {
    (0..t.row_count() as u32).collect()
}

fn continuous_table(cols: Vec<Vec<f64>>) -> Table {
    let schema = (0..cols.len()).map(|i| ColumnMeta::continuous(format!("c{i}"), 0.0, 0.0)).collect();
    Table::new("t", schema, cols.into_iter().map(Column::Continuous).collect()).unwrap()
}

fn independent_pair(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = (0..n).map(|_| rng.random::<f64>()).collect();
    continuous_table(vec![x, y])
}

#[test]
fn independent_columns_factorize_at_the_root() {
    let t = independent_pair(10_000, 1);
    let spn = learn(&t, &LearnParams::default()).unwrap();
    assert!(matches!(spn.root, Node::Product { .. }), "{:?}", spn.root.children().len());
}

#[test]
fn large_min_slice_gives_baseline_shape() {
    let t = synthetic(3_000, 2);
    let params = LearnParams {
        min_instance_slice: Some(5_000),
        ..LearnParams::default()
    };
    let spn = learn(&t, &params).unwrap();
    let Node::Product { children } = &spn.root else { panic!("{:?}", spn.root) };
    assert_eq!(children.len(), 3);
    assert!(children.iter().all(Node::is_leaf));
}

#[test]
fn monotone_capacity_matches_baseline() {
    let t = synthetic(3_000, 3);
    let params = LearnParams {
        rdc_threshold: 0.999_999,
        min_instance_slice: Some(t.row_count()),
        ..LearnParams::default()
    };
    let learned = learn(&t, &params).unwrap();
    let baseline = learn_independence_baseline(&t).unwrap();
    assert_eq!(learned.root, baseline.root);
}

#[test]
fn learned_model_answers_rare_count() {
    let t = synthetic(100_000, 4);
    let spn = learn(&t, &LearnParams::default()).unwrap();
    let q = compile_sql("SELECT COUNT(*) FROM syn WHERE filter='1' AND A='4'", t.schema());
    let err = metrics::avg_rel_error(&exact_query(&t, &q).unwrap(), &exec_probability(&spn, &q).unwrap()).unwrap();
    assert!(err < 0.03, "S3.1-style error {err}");
}

#[test]
fn baseline_ignores_dependence() {
    let t = synthetic(200_000, 5);
    let base = learn_independence_baseline(&t).unwrap();
    let cs = ConditionSet::single(0, Condition::codes([0])).with(1, Condition::codes([3]));
    // P(filter=1)·P(A=4) = 0.25 · 0.25·(0.2 + 0.03 + 0.009 + 0.0009)
    let expected = 0.25 * 0.25 * 0.2399;
    let p = probability(&base, &cs).unwrap();
    assert!((p - expected).abs() < 0.002, "{p} vs {expected}");
    // the true joint is 0.25 · 0.2 = 0.05
    assert!((p - 0.05).abs() > 0.03);
}

#[test]
fn one_column_baseline_is_a_leaf() {
    let t = continuous_table(vec![vec![1.0, 2.0, 3.0]]);
    assert!(learn_independence_baseline(&t).unwrap().root.is_leaf());
    assert!(learn(&t, &LearnParams::default()).unwrap().root.is_leaf());
}

#[test]
fn empty_and_invalid_inputs() {
    let empty = continuous_table(vec![vec![]]);
    assert_eq!(learn(&empty, &LearnParams::default()), Err(LearnError::EmptyTable));
    let t = continuous_table(vec![vec![1.0]]);
    let bad = LearnParams {
        rdc_threshold: 1.5,
        ..LearnParams::default()
    };
    assert!(matches!(learn(&t, &bad), Err(LearnError::Params(_))));
}

#[test]
fn split_examples() {
    let x: Vec<f64> = (0..500).map(f64::from).collect();
    let t = continuous_table(vec![x.clone(), x]);
    assert_eq!(split_columns(&t, &all_rows(&t), &[0, 1], 0.3, 0).len(), 1);

    let t = independent_pair(5_000, 6);
    assert_eq!(split_columns(&t, &all_rows(&t), &[0, 1], 0.3, 0).len(), 2);
    assert_eq!(split_columns(&t, &all_rows(&t), &[0, 1], 0.0, 0).len(), 1);
}

#[test]
fn clusters_recover_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 2_000;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let (x, y): (Vec<f64>, Vec<f64>) = labels
        .iter()
        .map(|&l| {
            let c = if l { 10.0 } else { -10.0 };
            (c + noise.sample(&mut rng), c + noise.sample(&mut rng))
        })
        .unzip();
    let t = continuous_table(vec![x, y]);
    let parts = cluster_rows(&t, &all_rows(&t), &[0, 1], 2, 0);
    assert_eq!(parts.len(), 2);
    let first = &parts[0];
    let agree = first.iter().filter(|&&r| labels[r as usize] == labels[first[0] as usize]).count();
    assert!(agree as f64 >= 0.95 * first.len() as f64);

    assert_eq!(cluster_rows(&t, &all_rows(&t), &[0, 1], 1, 0), vec![all_rows(&t)]);

    let same = continuous_table(vec![vec![3.0; 50], vec![1.0; 50]]);
    assert_eq!(cluster_rows(&same, &all_rows(&same), &[0, 1], 2, 0).len(), 1);
}

#[test]
fn leaf_fits() {
    let schema = vec![ColumnMeta::discrete("g", vec!["f".into(), "m".into()])];
    let t = Table::new("t", schema, vec![Column::Discrete(vec![0, 0, 0, 0, 1])]).unwrap();
    let Node::Discrete(l) = fit_leaf(&t, &all_rows(&t), 0, 0) else { panic!() };
    assert!((l.probs[0] - 0.8).abs() < 0.01 && (l.probs[1] - 0.2).abs() < 0.01);
    assert!((l.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let t = continuous_table(vec![(1..=100).map(f64::from).collect()]);
    let Node::Continuous(l) = fit_leaf(&t, &all_rows(&t), 0, 0) else { panic!() };
    assert!((l.total_mass() - 1.0).abs() < 1e-6);

    for v in [5.0, 12_345.0, 0.0] {
        let t = continuous_table(vec![vec![v]]);
        let Node::Continuous(l) = fit_leaf(&t, &[0], 0, 0) else { panic!() };
        let width = l.breaks()[l.breaks().len() - 1] - l.breaks()[0];
        let expected = f64::max(1e-6, 1e-3 * f64::abs(v));
        assert!((width - expected).abs() <= 1e-9 * expected.max(1.0), "width {width} for {v}");
        let spn = mbaqp_core::Spn::new("t", t.schema().to_vec(), 1, Node::Continuous(l));
        let cover = ConditionSet::single(0, Condition::interval(Interval::closed(v - width, v + width)));
        assert!((probability(&spn, &cover).unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn sum_weights_are_row_fractions() {
    let t = synthetic(20_000, 8);
    let spn = learn(&t, &LearnParams::default()).unwrap();
    let Node::Sum { weights, .. } = &spn.root else { panic!("root should cluster") };
    for w in weights {
        let rows = w * t.row_count() as f64;
        assert!((rows - rows.round()).abs() < 1e-6, "{w}");
    }
}

fn random_table(seed: u64, width: usize, rows: usize) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schema = Vec::new();
    let mut cols = Vec::new();
    let latent: Vec<u32> = (0..rows).map(|_| rng.random_range(0..3)).collect();
    for c in 0..width {
        match rng.random_range(0..4) {
            0 => {
                let k = rng.random_range(1..=5);
                schema.push(ColumnMeta::discrete(format!("d{c}"), labels(k)));
                cols.push(Column::Discrete(
                    latent.iter().map(|&z| if rng.random_bool(0.7) { z % k as u32 } else { rng.random_range(0..k as u32) }).collect(),
                ));
            }
            1 => {
                schema.push(ColumnMeta::continuous(format!("c{c}"), 0.0, 0.0));
                cols.push(Column::Continuous(
                    latent.iter().map(|&z| f64::from(z) * 5.0 + rng.random::<f64>()).collect(),
                ));
            }
            2 => {
                schema.push(ColumnMeta::continuous(format!("c{c}"), 0.0, 0.0));
                cols.push(Column::Continuous(vec![2.5; rows]));
            }
            _ => {
                schema.push(ColumnMeta::discrete(format!("d{c}"), labels(3)));
                cols.push(Column::Discrete((0..rows).map(|_| rng.random_range(0..3)).collect()));
            }
        }
    }
    Table::new("r", schema, cols).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn learned_models_are_valid_and_deterministic(
        seed in any::<u64>(),
        width in 1usize..=6,
        rows in prop_oneof![10usize..200, 200usize..3_000],
        threshold in 0.05f64..0.95,
        slice in prop::option::of(1usize..500),
    ) {
        let t = random_table(seed, width, rows);
        let params = LearnParams { rdc_threshold: threshold, min_instance_slice: slice, seed, cluster_k: 2 };
        let spn = learn(&t, &params).unwrap();
        prop_assert!(spn.validate().is_empty(), "{:?}", spn.validate());
        prop_assert_eq!(spn.scope().len(), width);
        let again = learn(&t, &params).unwrap();
        prop_assert_eq!(spn.to_json(), again.to_json());
    }
}
