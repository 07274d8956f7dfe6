//! Per-column constraints and their conjunctions.
//!
//! A [`Condition`] restricts one column either to a set of dictionary codes
//! (discrete columns) or to a union of real intervals (continuous columns).
//! A [`ConditionSet`] is a conjunction with at most one condition per column;
//! columns without an entry are unconstrained.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// A single real interval with independently open or closed endpoints.
///
/// Infinite endpoints are always stored as open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn new(lo: f64, lo_closed: bool, hi: f64, hi_closed: bool) -> Self {
        Interval {
            lo,
            hi,
            lo_closed: lo_closed && lo.is_finite(),
            hi_closed: hi_closed && hi.is_finite(),
        }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval::new(lo, true, hi, true)
    }

    pub fn point(x: f64) -> Self {
        Interval::closed(x, x)
    }

    pub fn all() -> Self {
        Interval::new(f64::NEG_INFINITY, false, f64::INFINITY, false)
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi && self.lo_closed && self.hi_closed
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn intersect(&self, other: &Interval) -> Interval {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        Interval::new(lo, lo_closed, hi, hi_closed)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}, {}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

/// Sorted, pairwise disjoint, non-touching intervals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalUnion(Vec<Interval>);

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion(Vec::new())
    }

    pub fn all() -> Self {
        IntervalUnion(vec![Interval::all()])
    }

    pub fn from_intervals(intervals: impl IntoIterator<Item = Interval>) -> Self {
        let mut items: Vec<Interval> = intervals.into_iter().filter(|i| !i.is_empty()).collect();
        items.sort_by(|a, b| {
            a.lo.total_cmp(&b.lo)
                .then_with(|| b.lo_closed.cmp(&a.lo_closed))
        });
        let mut merged: Vec<Interval> = Vec::with_capacity(items.len());
        for next in items {
            if let Some(last) = merged.last_mut() {
                let touches = next.lo < last.hi
                    || (next.lo == last.hi && (last.hi_closed || next.lo_closed));
                if touches {
                    if next.hi > last.hi {
                        last.hi = next.hi;
                        last.hi_closed = next.hi_closed;
                    } else if next.hi == last.hi {
                        last.hi_closed |= next.hi_closed;
                    }
                    continue;
                }
            }
            merged.push(next);
        }
        IntervalUnion(merged)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0.iter().any(|i| i.contains(x))
    }

    pub fn union(&self, other: &IntervalUnion) -> IntervalUnion {
        IntervalUnion::from_intervals(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut out = Vec::new();
        for a in &self.0 {
            for b in &other.0 {
                out.push(a.intersect(b));
            }
        }
        IntervalUnion::from_intervals(out)
    }

    pub fn has_point(&self) -> bool {
        self.0.iter().any(Interval::is_point)
    }
}

/// Sorted set of dictionary codes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValueSet(Vec<u32>);

impl ValueSet {
    pub fn new(codes: impl IntoIterator<Item = u32>) -> Self {
        let mut v: Vec<u32> = codes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        ValueSet(v)
    }

    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, code: u32) -> bool {
        self.0.binary_search(&code).is_ok()
    }

    pub fn union(&self, other: &ValueSet) -> ValueSet {
        ValueSet::new(self.0.iter().chain(other.0.iter()).copied())
    }

    pub fn intersect(&self, other: &ValueSet) -> ValueSet {
        ValueSet(self.0.iter().copied().filter(|c| other.contains(*c)).collect())
    }
}

/// A constraint on a single column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "snake_case")]
pub enum Condition {
    DiscreteSet(ValueSet),
    IntervalUnion(IntervalUnion),
}

impl Condition {
    pub fn codes(codes: impl IntoIterator<Item = u32>) -> Self {
        Condition::DiscreteSet(ValueSet::new(codes))
    }

    pub fn interval(interval: Interval) -> Self {
        Condition::IntervalUnion(IntervalUnion::from_intervals([interval]))
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Condition::DiscreteSet(s) => s.is_empty(),
            Condition::IntervalUnion(u) => u.is_empty(),
        }
    }

    /// True when a continuous condition contains a degenerate `[c, c]` piece.
    pub fn has_point(&self) -> bool {
        matches!(self, Condition::IntervalUnion(u) if u.has_point())
    }

    /// Tests a cell value. Discrete cells carry their code as `f64`.
    pub fn matches(&self, value: f64) -> bool {
        match self {
            Condition::DiscreteSet(s) => value >= 0.0 && s.contains(value as u32),
            Condition::IntervalUnion(u) => u.contains(value),
        }
    }

    /// Intersection; mixing a discrete and a continuous condition yields the
    /// empty condition of the left kind.
    pub fn intersect(&self, other: &Condition) -> Condition {
        match (self, other) {
            (Condition::DiscreteSet(a), Condition::DiscreteSet(b)) => {
                Condition::DiscreteSet(a.intersect(b))
            }
            (Condition::IntervalUnion(a), Condition::IntervalUnion(b)) => {
                Condition::IntervalUnion(a.intersect(b))
            }
            (Condition::DiscreteSet(_), _) => Condition::DiscreteSet(ValueSet::default()),
            (Condition::IntervalUnion(_), _) => Condition::IntervalUnion(IntervalUnion::empty()),
        }
    }

    pub fn union(&self, other: &Condition) -> Condition {
        match (self, other) {
            (Condition::DiscreteSet(a), Condition::DiscreteSet(b)) => {
                Condition::DiscreteSet(a.union(b))
            }
            (Condition::IntervalUnion(a), Condition::IntervalUnion(b)) => {
                Condition::IntervalUnion(a.union(b))
            }
            (left, _) => left.clone(),
        }
    }
}

/// Conjunction of per-column conditions keyed by schema column index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionSet {
    conditions: BTreeMap<usize, Condition>,
}

impl ConditionSet {
    pub fn new() -> Self {
        ConditionSet::default()
    }

    pub fn single(column: usize, condition: Condition) -> Self {
        let mut cs = ConditionSet::new();
        cs.conditions.insert(column, condition);
        cs
    }

    /// Adds a condition, intersecting with any existing one on that column.
    pub fn and_condition(&mut self, column: usize, condition: Condition) {
        match self.conditions.get_mut(&column) {
            Some(existing) => *existing = existing.intersect(&condition),
            None => {
                self.conditions.insert(column, condition);
            }
        }
    }

    pub fn with(mut self, column: usize, condition: Condition) -> Self {
        self.and_condition(column, condition);
        self
    }

    pub fn and(&self, other: &ConditionSet) -> ConditionSet {
        let mut out = self.clone();
        for (col, cond) in &other.conditions {
            out.and_condition(*col, cond.clone());
        }
        out
    }

    pub fn get(&self, column: usize) -> Option<&Condition> {
        self.conditions.get(&column)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Condition)> {
        self.conditions.iter().map(|(c, cond)| (*c, cond))
    }

    pub fn columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.conditions.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// True when some column's constraint admits no value at all.
    pub fn is_unsatisfiable(&self) -> bool {
        self.conditions.values().any(Condition::is_empty)
    }

    pub fn has_point(&self) -> bool {
        self.conditions.values().any(Condition::has_point)
    }

    /// Tests a full-width row where discrete cells hold codes as `f64`.
    pub fn matches_row(&self, row: &[f64]) -> bool {
        self.conditions
            .iter()
            .all(|(col, cond)| cond.matches(row[*col]))
    }
}

impl FromIterator<(usize, Condition)> for ConditionSet {
    fn from_iter<T: IntoIterator<Item = (usize, Condition)>>(iter: T) -> Self {
        let mut cs = ConditionSet::new();
        for (col, cond) in iter {
            cs.and_condition(col, cond);
        }
        cs
    }
}
