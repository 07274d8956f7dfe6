//! Aggregate results shared by every executor.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::QueryError;
use crate::schema::compare_keys;
use crate::spn::ModelError;

/// Which executor produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exact,
    Online,
    Probability,
    Random,
    Relevance,
    Stratified,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Exact => "exact",
            Strategy::Online => "online",
            Strategy::Probability => "probability",
            Strategy::Random => "random",
            Strategy::Relevance => "relevance",
            Strategy::Stratified => "stratified",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValue {
    /// Group-by labels in query order; empty for ungrouped queries.
    pub key: Vec<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub strategy: Strategy,
    pub samples_used: u64,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ResultMeta {
    pub fn new(strategy: Strategy) -> Self {
        ResultMeta {
            strategy,
            samples_used: 0,
            elapsed_ms: 0.0,
            model_id: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub groups: Vec<GroupValue>,
    pub meta: ResultMeta,
}

impl AggregateResult {
    /// Builds a result with groups sorted by key.
    pub fn from_groups(mut groups: Vec<GroupValue>, meta: ResultMeta) -> Self {
        groups.sort_by(|a, b| compare_keys(&a.key, &b.key));
        AggregateResult { groups, meta }
    }

    pub fn get(&self, key: &[&str]) -> Option<f64> {
        self.groups
            .iter()
            .find(|g| g.key.len() == key.len() && g.key.iter().zip(key).all(|(a, b)| a == b))
            .map(|g| g.value)
    }

    /// The single value of an ungrouped result.
    pub fn scalar(&self) -> Option<f64> {
        match self.groups.as_slice() {
            [g] if g.key.is_empty() => Some(g.value),
            _ => None,
        }
    }

    pub fn as_map(&self) -> HashMap<Vec<String>, f64> {
        self.groups.iter().map(|g| (g.key.clone(), g.value)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expression evaluation failed: {0}")]
    Eval(String),
    #[error("the probability-based strategy cannot answer this query: {0}")]
    ProbabilityUnsupported(String),
    #[error("invalid stop rule: {0}")]
    StopRule(String),
}

/// Exactly rounded floating-point summation (Shewchuk's partials, as in
/// Python's `math.fsum`), so sums are independent of accumulation order.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // round-half-even correction across the remaining partials
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut s = ExactSum::new();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}
