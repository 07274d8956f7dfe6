//! Structure learning: recursive row clustering (sum nodes) and column
//! independence splitting (product nodes).

mod dependence;
mod kmeans;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dependence::{correlation_ratio, maximal_correlation, spearman};
use dependence::Values;

use crate::spn::{ContinuousLeaf, DiscreteLeaf, Learner, Node, Spn};
use crate::table::{Column, Table};

/// Rows examined per pairwise dependence test.
pub const DEPENDENCE_SAMPLE_ROWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("cannot learn from an empty table")]
    EmptyTable,
    #[error("cannot learn from a table without columns")]
    NoColumns,
    #[error("invalid learner parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnParams {
    /// Column pairs whose dependence score exceeds this are kept together.
    pub rdc_threshold: f64,
    /// Slices with at most this many rows are fully factorized; `None`
    /// means `max(200, rows / 100)`.
    pub min_instance_slice: Option<usize>,
    pub seed: u64,
    pub cluster_k: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            rdc_threshold: 0.3,
            min_instance_slice: None,
            seed: 0,
            cluster_k: 2,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.rdc_threshold > 0.0 && self.rdc_threshold < 1.0) {
            return Err(LearnError::Params(format!(
                "rdc_threshold must lie in (0, 1), got {}",
                self.rdc_threshold
            )));
        }
        if self.min_instance_slice == Some(0) {
            return Err(LearnError::Params("min_instance_slice must be at least 1".into()));
        }
        if self.cluster_k == 0 {
            return Err(LearnError::Params("cluster_k must be at least 1".into()));
        }
        Ok(())
    }

    /// The slice size actually used for a table of `rows` rows.
    pub fn resolved_min_slice(&self, rows: usize) -> usize {
        self.min_instance_slice.unwrap_or_else(|| 200.max(rows / 100))
    }
}

/// Decorrelated child seed for position `i` below a node.
fn child_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ (i.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits a univariate leaf for `column` over `rows`.
pub fn fit_leaf(table: &Table, rows: &[u32], column: usize, seed: u64) -> Node {
    match table.column(column) {
        Column::Discrete(v) => Node::Discrete(DiscreteLeaf::fit(
            column,
            rows.iter().map(|&r| v[r as usize]),
            table.schema()[column].domain_len(),
        )),
        Column::Continuous(v) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Node::Continuous(ContinuousLeaf::fit(
                column,
                rows.iter().map(|&r| v[r as usize]).collect(),
                &mut rng,
            ))
        }
    }
}

fn product_of_leaves(table: &Table, rows: &[u32], cols: &[usize], seed: u64) -> Node {
    let mut leaves: Vec<Node> = cols
        .iter()
        .enumerate()
        .map(|(i, &c)| fit_leaf(table, rows, c, child_seed(seed, i as u64)))
        .collect();
    if leaves.len() == 1 {
        leaves.pop().expect("one leaf")
    } else {
        Node::product(leaves)
    }
}

/// Groups `cols` into connected components of the graph whose edges join
/// pairs with dependence score above `threshold`. A non-positive threshold
/// joins every pair.
pub fn split_columns(table: &Table, rows: &[u32], cols: &[usize], threshold: f64, seed: u64) -> Vec<Vec<usize>> {
    if cols.len() < 2 || threshold <= 0.0 {
        return vec![cols.to_vec()];
    }
    let subset: Vec<u32> = if rows.len() > DEPENDENCE_SAMPLE_ROWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = index::sample(&mut rng, rows.len(), DEPENDENCE_SAMPLE_ROWS).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| rows[i]).collect()
    } else {
        rows.to_vec()
    };
    enum Owned {
        D(Vec<u32>),
        C(Vec<f64>),
    }
    let data: Vec<Owned> = cols
        .iter()
        .map(|&c| match table.column(c) {
            Column::Discrete(v) => Owned::D(subset.iter().map(|&r| v[r as usize]).collect()),
            Column::Continuous(v) => Owned::C(subset.iter().map(|&r| v[r as usize]).collect()),
        })
        .collect();
    fn view(o: &Owned) -> Values<'_> {
        match o {
            Owned::D(v) => Values::Discrete(v.as_slice()),
            Owned::C(v) => Values::Continuous(v.as_slice()),
        }
    }

    let mut parent: Vec<usize> = (0..cols.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            if dependence::score(&view(&data[i]), &view(&data[j])) > threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; cols.len()];
    for i in 0..cols.len() {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(cols[i]);
    }
    groups
}

/// Seeded k-means partition of `rows`; empty clusters are dropped, so a
/// degenerate input yields a single cluster.
pub fn cluster_rows(table: &Table, rows: &[u32], cols: &[usize], k: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kmeans::kmeans(table, rows, cols, k, &mut rng)
}

struct SliceLearner<'a> {
    table: &'a Table,
    threshold: f64,
    min_slice: usize,
    k: usize,
}

impl SliceLearner<'_> {
    fn build(&self, rows: &[u32], cols: &[usize], seed: u64) -> Node {
        if cols.len() == 1 {
            return fit_leaf(self.table, rows, cols[0], seed);
        }
        if rows.len() <= self.min_slice {
            return product_of_leaves(self.table, rows, cols, seed);
        }
        let groups = split_columns(self.table, rows, cols, self.threshold, child_seed(seed, u64::MAX));
        if groups.len() > 1 {
            let children = rayon_map(&groups, |i, g| self.build(rows, g, child_seed(seed, i as u64)));
            return Node::product(children);
        }
        let clusters = cluster_rows(self.table, rows, cols, self.k, child_seed(seed, u64::MAX - 1));
        if clusters.len() < 2 {
            return product_of_leaves(self.table, rows, cols, seed);
        }
        let n = rows.len() as f64;
        let weights = clusters.iter().map(|c| c.len() as f64 / n).collect();
        let children = rayon_map(&clusters, |i, c| self.build(c, cols, child_seed(seed, i as u64)));
        Node::sum(weights, children)
    }
}

/// Maps items in parallel, preserving order.
fn rayon_map<T: Sync, F: Fn(usize, &T) -> Node + Sync>(items: &[T], f: F) -> Vec<Node> {
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

fn check_table(table: &Table) -> Result<(), LearnError> {
    if table.width() == 0 {
        return Err(LearnError::NoColumns);
    }
    if table.row_count() == 0 {
        return Err(LearnError::EmptyTable);
    }
    Ok(())
}

/// Learns a mixed sum-product network over every column of `table`.
pub fn learn(table: &Table, params: &LearnParams) -> Result<Spn, LearnError> {
    params.validate()?;
    check_table(table)?;
    let rows: Vec<u32> = (0..table.row_count() as u32).collect();
    let cols: Vec<usize> = (0..table.width()).collect();
    let min_slice = params.resolved_min_slice(table.row_count());
    let learner = SliceLearner {
        table,
        threshold: params.rdc_threshold,
        min_slice,
        k: params.cluster_k,
    };
    let root = learner.build(&rows, &cols, params.seed);
    let mut recorded = params.clone();
    recorded.min_instance_slice = Some(min_slice);
    Ok(Spn {
        learner: Learner::Learnspn,
        learner_params: Some(recorded),
        ..Spn::new(table.name(), table.schema().to_vec(), table.row_count() as u64, root)
    })
}

/// A single product node over one leaf per column (a lone leaf for a
/// one-column table).
pub fn learn_independence_baseline(table: &Table) -> Result<Spn, LearnError> {
    learn_independence_baseline_seeded(table, 0)
}

pub fn learn_independence_baseline_seeded(table: &Table, seed: u64) -> Result<Spn, LearnError> {
    check_table(table)?;
    let rows: Vec<u32> = (0..table.row_count() as u32).collect();
    let cols: Vec<usize> = (0..table.width()).collect();
    let root = product_of_leaves(table, &rows, &cols, seed);
    Ok(Spn {
        learner: Learner::Independence,
        ..Spn::new(table.name(), table.schema().to_vec(), table.row_count() as u64, root)
    })
}
