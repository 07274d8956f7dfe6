//! Exact execution over a table and the classical online-aggregation
//! baseline that samples rows uniformly without replacement.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::query::{Aggregate, CompiledQuery};
use crate::result::{AggregateResult, ExactSum, ExecError, GroupValue, ResultMeta, Strategy};
use crate::schema::ColumnMeta;
use crate::table::Table;

/// Rows drawn between progressive emissions of the online baseline.
pub const ONLINE_BATCH: usize = 1_000;

#[derive(Debug, Default, Clone)]
pub(crate) struct GroupStats {
    pub count: u64,
    pub sum: ExactSum,
}

/// Running per-group counts and exact sums keyed by group codes.
#[derive(Debug, Default, Clone)]
pub(crate) struct GroupAccumulator {
    groups: HashMap<Vec<u32>, GroupStats>,
    key_buf: Vec<u32>,
}

impl GroupAccumulator {
    pub fn new() -> Self {
        GroupAccumulator::default()
    }

    /// Adds a row that already passed the filter.
    pub fn add_row(&mut self, query: &CompiledQuery, row: &[f64]) -> Result<(), ExecError> {
        let value = match query.aggregate() {
            Aggregate::Count => 0.0,
            _ => query.target_value(row).map_err(ExecError::Eval)?,
        };
        self.key_buf.clear();
        self.key_buf
            .extend(query.group_cols.iter().map(|&c| row[c] as u32));
        let entry = match self.groups.get_mut(self.key_buf.as_slice()) {
            Some(e) => e,
            None => self.groups.entry(self.key_buf.clone()).or_default(),
        };
        entry.count += 1;
        if query.aggregate() != Aggregate::Count {
            entry.sum.add(value);
        }
        Ok(())
    }

    /// Forces a group to exist (ungrouped COUNT over zero rows is 0).
    pub fn touch(&mut self, key: Vec<u32>) {
        self.groups.entry(key).or_default();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u32>, &GroupStats)> {
        self.groups.iter()
    }

    /// Converts to a sorted result; `value` maps (codes, stats) to a group
    /// value, or `None` to omit the group.
    pub fn finish(
        &self,
        schema: &[ColumnMeta],
        group_cols: &[usize],
        meta: ResultMeta,
        mut value: impl FnMut(&[u32], &GroupStats) -> Option<f64>,
    ) -> AggregateResult {
        let groups = self
            .groups
            .iter()
            .filter_map(|(codes, stats)| {
                value(codes, stats).map(|v| GroupValue {
                    key: labels(schema, group_cols, codes),
                    value: v,
                })
            })
            .collect();
        AggregateResult::from_groups(groups, meta)
    }
}

pub(crate) fn labels(schema: &[ColumnMeta], group_cols: &[usize], codes: &[u32]) -> Vec<String> {
    group_cols
        .iter()
        .zip(codes)
        .map(|(&c, &code)| schema[c].label(code).to_string())
        .collect()
}

/// Relational semantics: groups with no matching rows are absent and
/// AVG/SUM over zero rows are absent; ungrouped COUNT over zero rows is 0.
pub fn exact_query(table: &Table, query: &CompiledQuery) -> Result<AggregateResult, ExecError> {
    let start = Instant::now();
    let mut acc = GroupAccumulator::new();
    let mut row = vec![0.0; table.width()];
    for i in 0..table.row_count() {
        table.read_row(i, &mut row);
        if query.matches(&row) {
            acc.add_row(query, &row)?;
        }
    }
    if query.group_cols.is_empty() && query.aggregate() == Aggregate::Count {
        acc.touch(Vec::new());
    }
    let mut meta = ResultMeta::new(Strategy::Exact);
    meta.samples_used = table.row_count() as u64;
    let agg = query.aggregate();
    let mut result = acc.finish(table.schema(), &query.group_cols, meta, |_, s| {
        finalize_unscaled(agg, s)
    });
    result.meta.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(result)
}

fn finalize_unscaled(agg: Aggregate, s: &GroupStats) -> Option<f64> {
    match agg {
        Aggregate::Count => Some(s.count as f64),
        _ if s.count == 0 => None,
        Aggregate::Sum => Some(s.sum.value()),
        Aggregate::Avg => Some(s.sum.value() / s.count as f64),
    }
}

/// Progressive online aggregation over a seeded uniform sample without
/// replacement. Each item is the estimate after one more batch of draws.
pub struct OnlineAggregation<'a> {
    table: &'a Table,
    query: &'a CompiledQuery,
    rng: ChaCha8Rng,
    perm: Vec<u32>,
    drawn: usize,
    budget: usize,
    batch: usize,
    acc: GroupAccumulator,
    row: Vec<f64>,
    seed: u64,
    start: Instant,
    failed: bool,
}

pub fn online_sample_query<'a>(
    table: &'a Table,
    query: &'a CompiledQuery,
    budget: usize,
    seed: u64,
) -> Result<OnlineAggregation<'a>, ExecError> {
    online_sample_query_batched(table, query, budget, ONLINE_BATCH, seed)
}

pub fn online_sample_query_batched<'a>(
    table: &'a Table,
    query: &'a CompiledQuery,
    budget: usize,
    batch: usize,
    seed: u64,
) -> Result<OnlineAggregation<'a>, ExecError> {
    if budget == 0 || batch == 0 {
        return Err(ExecError::StopRule("budget and batch size must be at least 1".into()));
    }
    Ok(OnlineAggregation {
        table,
        query,
        rng: ChaCha8Rng::seed_from_u64(seed),
        perm: (0..table.row_count() as u32).collect(),
        drawn: 0,
        budget: budget.min(table.row_count()),
        batch,
        acc: GroupAccumulator::new(),
        row: vec![0.0; table.width()],
        seed,
        start: Instant::now(),
        failed: false,
    })
}

impl OnlineAggregation<'_> {
    fn snapshot(&self) -> AggregateResult {
        let mut meta = ResultMeta::new(Strategy::Online);
        meta.samples_used = self.drawn as u64;
        meta.seed = Some(self.seed);
        meta.elapsed_ms = self.start.elapsed().as_secs_f64() * 1e3;
        let scale = self.table.row_count() as f64 / self.drawn as f64;
        let agg = self.query.aggregate();
        self.acc
            .finish(self.table.schema(), &self.query.group_cols, meta, |_, s| {
                match agg {
                    Aggregate::Count => Some(s.count as f64 * scale),
                    _ if s.count == 0 => None,
                    Aggregate::Sum => Some(s.sum.value() * scale),
                    Aggregate::Avg => Some(s.sum.value() / s.count as f64),
                }
            })
    }
}

impl Iterator for OnlineAggregation<'_> {
    type Item = Result<AggregateResult, ExecError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.drawn >= self.budget {
            return None;
        }
        let end = (self.drawn + self.batch).min(self.budget);
        let n = self.perm.len();
        for i in self.drawn..end {
            let j = self.rng.random_range(i..n);
            self.perm.swap(i, j);
            self.table.read_row(self.perm[i] as usize, &mut self.row);
            if self.query.matches(&self.row) {
                if let Err(e) = self.acc.add_row(self.query, &self.row) {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        self.drawn = end;
        if self.query.group_cols.is_empty() && self.query.aggregate() == Aggregate::Count {
            self.acc.touch(Vec::new());
        }
        Some(Ok(self.snapshot()))
    }
}
