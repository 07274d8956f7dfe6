mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{compile_sql, labels, synthetic};
use mbaqp_core::{exact_query, online_sample_query, online_sample_query_batched, Column, ColumnMeta, Table};

fn hand_table() -> Table {
    Table::new(
        "t",
        vec![
            ColumnMeta::discrete("g", vec!["a".into(), "b".into()]),
            ColumnMeta::continuous("x", 0.0, 0.0),
        ],
        vec![
            Column::Discrete(vec![0, 1, 0, 1, 0, 0, 1, 0, 0, 1]),
            Column::Continuous(vec![1.0, 10.0, 2.0, 20.0, 3.0, 4.0, 30.0, 5.0, 6.0, 40.0]),
        ],
    )
    .unwrap()
}

#[test]
fn always_true_count() {
    let t = hand_table();
    let r = exact_query(&t, &compile_sql("SELECT COUNT(*) FROM t WHERE x > -1", t.schema())).unwrap();
    assert_eq!(r.scalar(), Some(10.0));
}

#[test]
fn grouped_average() {
    let t = hand_table();
    let r = exact_query(&t, &compile_sql("SELECT g, AVG(x) FROM t GROUP BY g", t.schema())).unwrap();
    assert_eq!(r.get(&["a"]), Some(3.5));
    assert_eq!(r.get(&["b"]), Some(25.0));
}

#[test]
fn rare_count_on_synthetic_data() {
    let t = synthetic(200_000, 9);
    let r = exact_query(&t, &compile_sql("SELECT COUNT(*) FROM syn WHERE filter='1' AND A='4'", t.schema())).unwrap();
    let expected = 0.05 * 200_000.0;
    let sd = (200_000.0f64 * 0.05 * 0.95).sqrt();
    assert!((r.scalar().unwrap() - expected).abs() < 4.0 * sd);
}

#[test]
fn full_budget_online_equals_exact() {
    let t = synthetic(5_000, 10);
    for sql in [
        "SELECT A, SUM(B) FROM syn WHERE filter <> '2' GROUP BY A",
        "SELECT A, COUNT(*) FROM syn GROUP BY A",
        "SELECT AVG(B) FROM syn WHERE B > 120",
    ] {
        let q = compile_sql(sql, t.schema());
        let exact = exact_query(&t, &q).unwrap();
        let last = online_sample_query(&t, &q, t.row_count(), 3).unwrap().last().unwrap().unwrap();
        assert_eq!(last.groups, exact.groups, "{sql}");
    }
}

#[test]
fn online_is_reproducible() {
    let t = synthetic(5_000, 11);
    let q = compile_sql("SELECT A, AVG(B) FROM syn WHERE filter='2' GROUP BY A", t.schema());
    let run = |seed| {
        online_sample_query_batched(&t, &q, 2_000, 250, seed)
            .unwrap()
            .map(|r| r.unwrap().groups)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn online_variance_matches_sampling_theory() {
    // 10,000 rows, 100 matching; budget 100 → ~1 retained row per run
    let n = 10_000;
    let flag: Vec<u32> = (0..n).map(|i| u32::from(i % 100 == 0)).collect();
    let t = Table::new(
        "t",
        vec![ColumnMeta::discrete("f", labels(2))],
        vec![Column::Discrete(flag)],
    )
    .unwrap();
    let q = compile_sql("SELECT COUNT(*) FROM t WHERE f = '2'", t.schema());
    let runs = 4_000;
    let estimates: Vec<f64> = (0..runs)
        .map(|seed| {
            online_sample_query(&t, &q, 100, seed)
                .unwrap()
                .last()
                .unwrap()
                .unwrap()
                .scalar()
                .unwrap()
        })
        .collect();
    let mean = estimates.iter().sum::<f64>() / runs as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    // hypergeometric: Var[k] = b·p·(1−p)·(N−b)/(N−1), estimate = k·N/b
    let (nn, b, p) = (n as f64, 100.0, 0.01);
    let expected_var = (nn / b).powi(2) * b * p * (1.0 - p) * (nn - b) / (nn - 1.0);
    let se = (expected_var / runs as f64).sqrt();
    assert!((mean - 100.0).abs() < 4.0 * se, "mean {mean}");
    assert!((var / expected_var - 1.0).abs() < 0.1, "variance {var} vs {expected_var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_row_scan(seed in any::<u64>(), n in 0usize..1_000, agg in 0usize..3, grouped in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let h: Vec<u32> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..10))).collect();
        let t = Table::new(
            "t",
            vec![
                ColumnMeta::discrete("g", vec!["p".into(), "q".into(), "r".into()]),
                ColumnMeta::discrete("h", labels(2)),
                ColumnMeta::continuous("x", 0.0, 0.0),
                ColumnMeta::continuous("y", 0.0, 0.0),
            ],
            vec![Column::Discrete(g.clone()), Column::Discrete(h.clone()), Column::Continuous(x.clone()), Column::Continuous(y.clone())],
        ).unwrap();
        let cut = rng.random_range(-5.0..5.0);
        let (name, target) = [("COUNT", "*"), ("SUM", "x + y"), ("AVG", "x - y")][agg];
        let sql = if grouped {
            format!("SELECT g, {name}({target}) FROM t WHERE x > {cut} OR h = '1' GROUP BY g")
        } else {
            format!("SELECT {name}({target}) FROM t WHERE x > {cut} OR h = '1'")
        };
        let r = exact_query(&t, &compile_sql(&sql, t.schema())).unwrap();

        let mut oracle: BTreeMap<Vec<String>, (f64, f64)> = BTreeMap::new();
        for i in 0..n {
            if x[i] > cut || h[i] == 0 {
                let key = if grouped { vec![["p", "q", "r"][g[i] as usize].to_string()] } else { vec![] };
                let e = oracle.entry(key).or_insert((0.0, 0.0));
                e.0 += 1.0;
                e.1 += if agg == 1 { x[i] + y[i] } else { x[i] - y[i] };
            }
        }
        if !grouped && agg == 0 {
            oracle.entry(vec![]).or_insert((0.0, 0.0));
        }
        prop_assert_eq!(r.groups.len(), oracle.len());
        for (key, (count, sum)) in oracle {
            let want = match agg { 0 => count, 1 => sum, _ => sum / count };
            let keys: Vec<&str> = key.iter().map(String::as_str).collect();
            let got = r.get(&keys).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} {:?}: {} vs {}", sql, key, got, want);
        }
    }
}
