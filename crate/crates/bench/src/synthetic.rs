//! The three-column synthetic dataset: `filter` selects how skewed the
//! distribution of `A` is, and `B` is normal given `A`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use mbaqp_core::{Column, ColumnMeta, Table};

use crate::BenchError;

pub const SYNTHETIC_TABLE: &str = "syn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n: usize,
    pub seed: u64,
    /// `P(filter = f)` for `f = 1..4`.
    pub filter_probs: [f64; 4],
    /// `P(A = a | filter = f)`, one row per filter value.
    pub a_given_filter: [[f64; 5]; 4],
    /// `(mean, stddev)` of `B` given `A = a`.
    pub b_given_a: [(f64, f64); 5],
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n: 1_000_000,
            seed: 0,
            filter_probs: [0.25; 4],
            a_given_filter: [
                [0.2, 0.2, 0.2, 0.2, 0.2],
                [0.70, 0.20, 0.06, 0.03, 0.01],
                [0.90, 0.06, 0.03, 0.009, 0.001],
                [0.99, 0.006, 0.003, 0.0009, 0.0001],
            ],
            b_given_a: [(100.0, 20.0), (110.0, 20.0), (120.0, 20.0), (130.0, 20.0), (140.0, 20.0)],
        }
    }
}

impl SyntheticParams {
    pub fn with_n(n: usize, seed: u64) -> Self {
        SyntheticParams {
            n,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let stochastic = |row: &[f64], what: &str| -> Result<(), BenchError> {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(BenchError::Params(format!("{what} must be non-negative and sum to 1, got {row:?}")));
            }
            Ok(())
        };
        stochastic(&self.filter_probs, "filter_probs")?;
        for (f, row) in self.a_given_filter.iter().enumerate() {
            stochastic(row, &format!("a_given_filter[{}]", f + 1))?;
        }
        for (a, (mean, sd)) in self.b_given_a.iter().enumerate() {
            if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) {
                return Err(BenchError::Params(format!(
                    "b_given_a[{}] needs a finite mean and positive stddev, got ({mean}, {sd})",
                    a + 1
                )));
            }
        }
        Ok(())
    }
}

/// Generates the synthetic table row by row from a seeded generator.
pub fn gen_synthetic(p: &SyntheticParams) -> Result<Table, BenchError> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let filter_dist = WeightedIndex::new(p.filter_probs).map_err(|e| BenchError::Params(e.to_string()))?;
    let a_dist = p
        .a_given_filter
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| BenchError::Params(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let b_dist = p
        .b_given_a
        .iter()
        .map(|&(m, s)| Normal::new(m, s).map_err(|e| BenchError::Params(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut filter = Vec::with_capacity(p.n);
    let mut a = Vec::with_capacity(p.n);
    let mut b = Vec::with_capacity(p.n);
    for _ in 0..p.n {
        let f = filter_dist.sample(&mut rng);
        let ai = a_dist[f].sample(&mut rng);
        filter.push(f as u32);
        a.push(ai as u32);
        b.push(b_dist[ai].sample(&mut rng));
    }
    let labels = |k: usize| (1..=k).map(|i| i.to_string()).collect::<Vec<_>>();
    let schema = vec![
        ColumnMeta::discrete("filter", labels(4)),
        ColumnMeta::discrete("A", labels(5)),
        ColumnMeta::continuous("B", 0.0, 0.0),
    ];
    Ok(Table::new(
        SYNTHETIC_TABLE,
        schema,
        vec![Column::Discrete(filter), Column::Discrete(a), Column::Continuous(b)],
    )?)
}
