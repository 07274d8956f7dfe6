use std::collections::HashMap;

use proptest::prelude::*;

use mbaqp_bench::{gen_synthetic, resample_scale, BenchError, SyntheticParams};
use mbaqp_core::{Column, ColumnMeta, Table};

fn codes(t: &Table, col: usize) -> &[u32] {
    match t.column(col) {
        Column::Discrete(c) => c,
        Column::Continuous(_) => panic!("column {col} is continuous"),
    }
}

fn values(t: &Table, col: usize) -> &[f64] {
    match t.column(col) {
        Column::Continuous(c) => c,
        Column::Discrete(_) => panic!("column {col} is discrete"),
    }
}

#[test]
fn rare_combination_frequency() {
    let t = gen_synthetic(&SyntheticParams::with_n(1_000_000, 3)).unwrap();
    let (f, a) = (codes(&t, 0), codes(&t, 1));
    let in_f4 = f.iter().filter(|&&v| v == 3).count() as f64;
    let both = f.iter().zip(a).filter(|(&fv, &av)| fv == 3 && av == 3).count() as f64;
    let p = 0.0009;
    let freq = both / in_f4;
    assert!((freq - p).abs() <= 3.0 * (p * (1.0 - p) / in_f4).sqrt(), "P(A=4 | filter=4) = {freq}");
    assert!((in_f4 / 1e6 - 0.25).abs() < 3.0 * (0.25 * 0.75 / 1e6f64).sqrt());
}

#[test]
fn b_is_normal_around_the_group_mean() {
    let t = gen_synthetic(&SyntheticParams::with_n(200_000, 4)).unwrap();
    let (a, b) = (codes(&t, 1), values(&t, 2));
    let top: Vec<f64> = a.iter().zip(b).filter(|(&av, _)| av == 4).map(|(_, &bv)| bv).collect();
    let n = top.len() as f64;
    let mean = top.iter().sum::<f64>() / n;
    let sd = (top.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 140.0).abs() < 4.0 * 20.0 / n.sqrt(), "mean {mean}");
    assert!((sd - 20.0).abs() < 1.0, "sd {sd}");
}

#[test]
fn empty_and_deterministic() {
    let t = gen_synthetic(&SyntheticParams::with_n(0, 1)).unwrap();
    assert_eq!(t.row_count(), 0);
    assert_eq!(t.schema().len(), 3);

    let p = SyntheticParams::with_n(2_000, 9);
    let (x, y) = (gen_synthetic(&p).unwrap(), gen_synthetic(&p).unwrap());
    assert_eq!(x, y);
    let bits = |t: &Table| values(t, 2).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&x), bits(&y));
    assert_ne!(x, gen_synthetic(&SyntheticParams::with_n(2_000, 10)).unwrap());
}

#[test]
fn invalid_parameters() {
    let mut p = SyntheticParams::with_n(10, 0);
    p.filter_probs = [0.5, 0.5, 0.5, 0.5];
    assert!(matches!(gen_synthetic(&p), Err(BenchError::Params(_))));
    let mut p = SyntheticParams::with_n(10, 0);
    p.b_given_a[2].1 = 0.0;
    assert!(matches!(gen_synthetic(&p), Err(BenchError::Params(_))));
}

fn small_table() -> Table {
    Table::new(
        "s",
        vec![ColumnMeta::discrete("k", (0..5).map(|i| format!("v{i}")).collect())],
        vec![Column::Discrete(vec![0, 1, 2, 3, 4])],
    )
    .unwrap()
}

#[test]
fn resampling() {
    let t = small_table();
    let r = resample_scale(&t, 50_000, 1).unwrap();
    assert_eq!(r.row_count(), 50_000);
    assert_eq!(r.schema(), t.schema());
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &c in codes(&r, 0) {
        *counts.entry(c).or_default() += 1;
    }
    // each source row is expected 10,000 times
    let sd = (50_000.0f64 * 0.2 * 0.8).sqrt();
    for k in 0..5 {
        assert!((counts[&k] as f64 - 10_000.0).abs() < 4.0 * sd, "{k}: {}", counts[&k]);
    }

    assert_eq!(resample_scale(&t, 0, 1).unwrap().row_count(), 0);
    assert_eq!(resample_scale(&t, 100, 2).unwrap(), resample_scale(&t, 100, 2).unwrap());
    let empty = gen_synthetic(&SyntheticParams::with_n(0, 0)).unwrap();
    assert!(matches!(resample_scale(&empty, 10, 0), Err(BenchError::Params(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn resampled_rows_come_from_the_source(seed in any::<u64>(), n in 0usize..500) {
        let t = gen_synthetic(&SyntheticParams::with_n(50, seed)).unwrap();
        let source: Vec<Vec<u64>> = (0..t.row_count()).map(|i| t.row(i).iter().map(|v| v.to_bits()).collect()).collect();
        let r = resample_scale(&t, n, seed).unwrap();
        for i in 0..r.row_count() {
            let row: Vec<u64> = r.row(i).iter().map(|v| v.to_bits()).collect();
            prop_assert!(source.contains(&row));
        }
    }
}
