//! Compilation of predicates, filters and targets against a schema.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::{Aggregate, ArithOp, BoolExpr, CmpOp, Expr, Literal, Predicate, QuerySpec};
use super::udf::{CompiledExpr, NumericView, UdfRegistry};
use super::QueryError;
use crate::condition::{Condition, ConditionSet, Interval};
use crate::schema::{column_index, ColumnMeta, ColumnType};

/// Upper bound on inclusion–exclusion terms for cross-column disjunctions.
pub const MAX_SIGNED_TERMS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedTerm {
    pub sign: i8,
    pub conditions: ConditionSet,
}

/// A filter rewritten as `Σ sign · [conjunction]` via the addition rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedConditionSets {
    pub terms: Vec<SignedTerm>,
}

impl SignedConditionSets {
    pub fn unconditioned() -> Self {
        SignedConditionSets {
            terms: vec![SignedTerm {
                sign: 1,
                conditions: ConditionSet::new(),
            }],
        }
    }

    /// The conjunction, when the filter compiled to a single positive term.
    pub fn single(&self) -> Option<&ConditionSet> {
        match self.terms.as_slice() {
            [t] if t.sign == 1 => Some(&t.conditions),
            _ => None,
        }
    }

    pub fn has_point(&self) -> bool {
        self.terms.iter().any(|t| t.conditions.has_point())
    }

    fn and(&self, other: &SignedConditionSets) -> Result<SignedConditionSets, QueryError> {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(SignedTerm {
                    sign: a.sign * b.sign,
                    conditions: a.conditions.and(&b.conditions),
                });
                if terms.len() > MAX_SIGNED_TERMS {
                    return Err(QueryError::ExpansionTooLarge(MAX_SIGNED_TERMS));
                }
            }
        }
        Ok(SignedConditionSets { terms })
    }

    fn or(&self, other: &SignedConditionSets) -> Result<SignedConditionSets, QueryError> {
        if let (Some(a), Some(b)) = (self.single(), other.single()) {
            if a.len() == 1 && b.len() == 1 {
                let (ca, cond_a) = a.iter().next().expect("one column");
                let (cb, cond_b) = b.iter().next().expect("one column");
                if ca == cb {
                    return Ok(SignedConditionSets {
                        terms: vec![SignedTerm {
                            sign: 1,
                            conditions: ConditionSet::single(ca, cond_a.union(cond_b)),
                        }],
                    });
                }
            }
        }
        // A ∨ B = A + B − (A ∧ B)
        let both = self.and(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        terms.extend(both.terms.into_iter().map(|t| SignedTerm {
            sign: -t.sign,
            conditions: t.conditions,
        }));
        if terms.len() > MAX_SIGNED_TERMS {
            return Err(QueryError::ExpansionTooLarge(MAX_SIGNED_TERMS));
        }
        Ok(SignedConditionSets { terms })
    }
}

/// Filter tree with predicates compiled to per-column conditions, for
/// row-at-a-time evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledBool {
    Cond(usize, Condition),
    And(Box<CompiledBool>, Box<CompiledBool>),
    Or(Box<CompiledBool>, Box<CompiledBool>),
}

impl CompiledBool {
    /// Evaluates on a full-width row where discrete cells hold codes.
    pub fn eval(&self, row: &[f64]) -> bool {
        match self {
            CompiledBool::Cond(col, cond) => cond.matches(row[*col]),
            CompiledBool::And(a, b) => a.eval(row) && b.eval(row),
            CompiledBool::Or(a, b) => a.eval(row) || b.eval(row),
        }
    }

    fn columns(&self, out: &mut BTreeSet<usize>) {
        match self {
            CompiledBool::Cond(c, _) => {
                out.insert(*c);
            }
            CompiledBool::And(a, b) | CompiledBool::Or(a, b) => {
                a.columns(out);
                b.columns(out);
            }
        }
    }
}

/// `constant + Σ coefficient · column`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearForm {
    pub coefficients: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinearForm {
    fn from_expr(expr: &CompiledExpr) -> Option<LinearForm> {
        let mut form = LinearForm::default();
        form.accumulate(expr, 1.0).then_some(form)
    }

    fn accumulate(&mut self, expr: &CompiledExpr, scale: f64) -> bool {
        match expr {
            CompiledExpr::Column(c) => {
                *self.coefficients.entry(*c).or_insert(0.0) += scale;
                true
            }
            CompiledExpr::Const(x) => {
                self.constant += scale * x;
                true
            }
            CompiledExpr::Neg(e) => self.accumulate(e, -scale),
            CompiledExpr::Binary(ArithOp::Add, a, b) => {
                self.accumulate(a, scale) && self.accumulate(b, scale)
            }
            CompiledExpr::Binary(ArithOp::Sub, a, b) => {
                self.accumulate(a, scale) && self.accumulate(b, -scale)
            }
            CompiledExpr::Binary(..) | CompiledExpr::Builtin(..) => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyClass {
    ProbabilityBased,
    SampleBased,
}

/// A query resolved against a schema.
#[derive(Debug, Clone)]
pub struct CompiledQuery {
    pub spec: QuerySpec,
    pub target: Option<CompiledExpr>,
    /// Present when the target is a ±-linear column expression without
    /// multiplication, division or function calls.
    pub linear: Option<LinearForm>,
    pub filter: Option<CompiledBool>,
    /// Signed conjunctions; `Err` when the disjunction expansion overflows.
    pub terms: Result<SignedConditionSets, QueryError>,
    pub group_cols: Vec<usize>,
    pub used_columns: BTreeSet<usize>,
    pub(crate) view: NumericView,
}

impl CompiledQuery {
    pub fn aggregate(&self) -> Aggregate {
        self.spec.aggregate
    }

    pub fn matches(&self, row: &[f64]) -> bool {
        self.filter.as_ref().is_none_or(|f| f.eval(row))
    }

    /// Target value for a row; `1` for `COUNT(*)`.
    pub fn target_value(&self, row: &[f64]) -> Result<f64, String> {
        match &self.target {
            None => Ok(1.0),
            Some(e) => e.eval(row, &self.view),
        }
    }

    /// Why the probability-based strategy cannot serve this query, if it cannot.
    pub fn probability_blocker(&self) -> Option<String> {
        if self.target.is_some() && self.linear.is_none() {
            return Some(
                "target uses multiplication, division or a function; only +/- combinations of columns can be computed from probabilities".into(),
            );
        }
        let terms = match &self.terms {
            Ok(t) => t,
            Err(e) => return Some(format!("filter cannot be compiled to conjunctions: {e}")),
        };
        if terms.has_point() {
            return Some("equality on a continuous column has probability zero under the density model".into());
        }
        if self.spec.aggregate == Aggregate::Avg && terms.single().is_none() {
            return Some("AVG over a cross-column disjunction requires the sample-based strategy".into());
        }
        None
    }
}

/// Resolves names, compiles the filter and target, and records the columns
/// a query touches.
pub fn compile(
    spec: &QuerySpec,
    schema: &[ColumnMeta],
    udfs: &UdfRegistry,
) -> Result<CompiledQuery, QueryError> {
    let mut group_cols = Vec::with_capacity(spec.group_by.len());
    for g in &spec.group_by {
        let idx = column_index(schema, g).ok_or_else(|| QueryError::UnknownColumn(g.clone()))?;
        if !schema[idx].is_discrete() {
            return Err(QueryError::ContinuousGroup(g.clone()));
        }
        if !group_cols.contains(&idx) {
            group_cols.push(idx);
        }
    }
    let target = spec
        .target
        .as_ref()
        .map(|e| CompiledExpr::compile(e, schema, udfs))
        .transpose()?;
    let linear = target.as_ref().and_then(LinearForm::from_expr);
    let filter = spec
        .filter
        .as_ref()
        .map(|f| compile_bool(f, schema))
        .transpose()?;
    let terms = match &spec.filter {
        None => Ok(SignedConditionSets::unconditioned()),
        Some(f) => match compile_filter(f, schema) {
            Err(QueryError::ExpansionTooLarge(n)) => Err(QueryError::ExpansionTooLarge(n)),
            other => Ok(other?),
        },
    };
    let mut used_columns: BTreeSet<usize> = group_cols.iter().copied().collect();
    if let Some(f) = &filter {
        f.columns(&mut used_columns);
    }
    if let Some(t) = &target {
        let mut cols = Vec::new();
        t.columns(&mut cols);
        used_columns.extend(cols);
    }
    Ok(CompiledQuery {
        spec: spec.clone(),
        target,
        linear,
        filter,
        terms,
        group_cols,
        used_columns,
        view: NumericView::new(schema),
    })
}

/// Probability-based iff the target is `*` or ±-linear, the filter expands
/// within the cap without continuous point predicates, and AVG sees a single
/// positive conjunction.
pub fn choose_strategy(query: &CompiledQuery) -> StrategyClass {
    if query.probability_blocker().is_none() {
        StrategyClass::ProbabilityBased
    } else {
        StrategyClass::SampleBased
    }
}

fn compile_bool(expr: &BoolExpr, schema: &[ColumnMeta]) -> Result<CompiledBool, QueryError> {
    Ok(match expr {
        BoolExpr::Pred(p) => {
            let idx = column_index(schema, &p.column)
                .ok_or_else(|| QueryError::UnknownColumn(p.column.clone()))?;
            CompiledBool::Cond(idx, compile_predicate(p, &schema[idx])?)
        }
        BoolExpr::And(a, b) => CompiledBool::And(
            Box::new(compile_bool(a, schema)?),
            Box::new(compile_bool(b, schema)?),
        ),
        BoolExpr::Or(a, b) => CompiledBool::Or(
            Box::new(compile_bool(a, schema)?),
            Box::new(compile_bool(b, schema)?),
        ),
    })
}

/// Turns `column OP constant` into a value set (discrete) or an interval
/// union (continuous).
pub fn compile_predicate(pred: &Predicate, meta: &ColumnMeta) -> Result<Condition, QueryError> {
    match &meta.ty {
        ColumnType::Discrete { domain } => {
            let numeric = meta.numeric_domain();
            if pred.op.is_ordering() {
                let Some(values) = numeric else {
                    return Err(QueryError::UnorderedDomain(meta.name.clone()));
                };
                let c = pred.value.as_number().ok_or_else(|| QueryError::TypeMismatch {
                    column: meta.name.clone(),
                    message: format!("cannot compare with non-numeric constant {}", pred.value),
                })?;
                let keep = |v: f64| match pred.op {
                    CmpOp::Lt => v < c,
                    CmpOp::Le => v <= c,
                    CmpOp::Gt => v > c,
                    CmpOp::Ge => v >= c,
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                };
                return Ok(Condition::codes(
                    values
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| keep(**v))
                        .map(|(i, _)| i as u32),
                ));
            }
            let text = pred.value.text();
            let hit = domain.iter().position(|v| *v == text).or_else(|| {
                let c = pred.value.as_number()?;
                numeric.as_ref()?.iter().position(|v| *v == c)
            });
            if matches!(pred.value, Literal::Number(_)) && numeric.is_none() && hit.is_none() {
                return Err(QueryError::TypeMismatch {
                    column: meta.name.clone(),
                    message: format!("numeric constant {} for a non-numeric domain", pred.value),
                });
            }
            let hit = hit.map(|i| i as u32);
            Ok(match pred.op {
                CmpOp::Eq => Condition::codes(hit),
                _ => Condition::codes((0..domain.len() as u32).filter(|c| Some(*c) != hit)),
            })
        }
        ColumnType::Continuous { .. } => {
            let c = pred.value.as_number().ok_or_else(|| QueryError::TypeMismatch {
                column: meta.name.clone(),
                message: format!("continuous column compared with non-numeric {}", pred.value),
            })?;
            let (neg, pos) = (f64::NEG_INFINITY, f64::INFINITY);
            Ok(match pred.op {
                CmpOp::Eq => Condition::interval(Interval::point(c)),
                CmpOp::Ne => Condition::IntervalUnion(crate::condition::IntervalUnion::from_intervals([
                    Interval::new(neg, false, c, false),
                    Interval::new(c, false, pos, false),
                ])),
                CmpOp::Lt => Condition::interval(Interval::new(neg, false, c, false)),
                CmpOp::Le => Condition::interval(Interval::new(neg, false, c, true)),
                CmpOp::Gt => Condition::interval(Interval::new(c, false, pos, false)),
                CmpOp::Ge => Condition::interval(Interval::new(c, true, pos, false)),
            })
        }
    }
}

/// Compiles a boolean filter: AND intersects, same-column OR unions, and
/// cross-column OR expands by inclusion–exclusion up to [`MAX_SIGNED_TERMS`].
pub fn compile_filter(
    filter: &BoolExpr,
    schema: &[ColumnMeta],
) -> Result<SignedConditionSets, QueryError> {
    match filter {
        BoolExpr::Pred(p) => {
            let idx = column_index(schema, &p.column)
                .ok_or_else(|| QueryError::UnknownColumn(p.column.clone()))?;
            Ok(SignedConditionSets {
                terms: vec![SignedTerm {
                    sign: 1,
                    conditions: ConditionSet::single(idx, compile_predicate(p, &schema[idx])?),
                }],
            })
        }
        BoolExpr::And(a, b) => compile_filter(a, schema)?.and(&compile_filter(b, schema)?),
        BoolExpr::Or(a, b) => compile_filter(a, schema)?.or(&compile_filter(b, schema)?),
    }
}

impl Expr {
    /// True when the expression contains `*`, `/` or a function call.
    pub fn is_nonlinear(&self) -> bool {
        match self {
            Expr::Column(_) | Expr::Number(_) => false,
            Expr::Neg(e) => e.is_nonlinear(),
            Expr::Binary { op, lhs, rhs } => {
                matches!(op, ArithOp::Mul | ArithOp::Div) || lhs.is_nonlinear() || rhs.is_nonlinear()
            }
            Expr::Call { .. } => true,
        }
    }
}
