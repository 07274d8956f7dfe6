//! Bottom-up inference: probabilities of condition sets, conditional
//! expectations of linear targets, and group enumeration.

use crate::condition::{Condition, ConditionSet};
use crate::query::LinearForm;
use crate::schema::compare_keys;
use crate::spn::{ModelError, Node, Spn};

/// Probability that a leaf's value satisfies `cond`, clamped to [0, 1].
pub fn leaf_probability(leaf: &Node, column: usize, cond: &Condition) -> Result<f64, ModelError> {
    match leaf.leaf_column() {
        Some(c) if c == column => Ok(leaf_mass(leaf, Some(cond))),
        Some(c) => Err(ModelError::ColumnMismatch {
            leaf: c,
            condition: column,
        }),
        None => Err(ModelError::Invalid(vec!["leaf_probability called on an inner node".into()])),
    }
}

fn leaf_mass(leaf: &Node, cond: Option<&Condition>) -> f64 {
    let Some(cond) = cond else { return 1.0 };
    match (leaf, cond) {
        (Node::Discrete(l), Condition::DiscreteSet(s)) => l.mass(s),
        (Node::Continuous(l), Condition::IntervalUnion(u)) => l.mass(u),
        (Node::Discrete(l), Condition::IntervalUnion(u)) => l
            .probs
            .iter()
            .enumerate()
            .filter(|(c, _)| u.contains(*c as f64))
            .map(|(_, p)| p)
            .sum::<f64>()
            .clamp(0.0, 1.0),
        _ => 0.0,
    }
}

pub(crate) fn node_probability(node: &Node, cs: &ConditionSet) -> f64 {
    match node {
        Node::Discrete(_) | Node::Continuous(_) => {
            leaf_mass(node, cs.get(node.leaf_column().expect("leaf")))
        }
        Node::Product { children } => {
            let mut p = 1.0;
            for c in children {
                p *= node_probability(c, cs);
                if p == 0.0 {
                    break;
                }
            }
            p
        }
        Node::Sum { weights, children } => weights
            .iter()
            .zip(children)
            .map(|(w, c)| w * node_probability(c, cs))
            .sum(),
    }
}

fn check_columns(spn: &Spn, cs: &ConditionSet) -> Result<(), ModelError> {
    let scope = spn.scope();
    for c in cs.columns() {
        if !scope.contains(&c) {
            return Err(match spn.columns.get(c) {
                Some(m) => ModelError::OutOfScope(m.name.clone()),
                None => ModelError::UnknownColumn(format!("#{c}")),
            });
        }
    }
    Ok(())
}

/// `P(cs)`; the empty condition set has probability 1.
pub fn probability(spn: &Spn, cs: &ConditionSet) -> Result<f64, ModelError> {
    check_columns(spn, cs)?;
    Ok(node_probability(&spn.root, cs).clamp(0.0, 1.0))
}

/// `(E[X · 1{cs}], P(cs))` for one column, or `None` when `column` is not in
/// the node's scope.
fn node_moment(node: &Node, column: usize, cs: &ConditionSet, values: &[Option<Vec<f64>>]) -> Option<(f64, f64)> {
    match node {
        Node::Discrete(l) => {
            if l.column != column {
                return None;
            }
            let set = match cs.get(column) {
                None => None,
                Some(Condition::DiscreteSet(s)) => Some(s),
                Some(_) => return Some((0.0, 0.0)),
            };
            let vals = values[column].as_deref().unwrap_or(&[]);
            Some(l.moment(set, vals))
        }
        Node::Continuous(l) => {
            if l.column() != column {
                return None;
            }
            match cs.get(column) {
                None => Some(l.moment(None)),
                Some(Condition::IntervalUnion(u)) => Some(l.moment(Some(u))),
                Some(_) => Some((0.0, 0.0)),
            }
        }
        Node::Product { children } => {
            let mut target = None;
            let mut others = 1.0;
            for c in children {
                match node_moment(c, column, cs, values) {
                    Some(pair) => target = Some(pair),
                    None => others *= node_probability(c, cs),
                }
            }
            target.map(|(m, p)| (m * others, p * others))
        }
        Node::Sum { weights, children } => {
            let mut m = 0.0;
            let mut p = 0.0;
            for (w, c) in weights.iter().zip(children) {
                let (cm, cp) = node_moment(c, column, cs, values)?;
                m += w * cm;
                p += w * cp;
            }
            Some((m, p))
        }
    }
}

/// Numeric reading of every modeled column (`None` for non-numeric domains).
pub(crate) fn numeric_values(spn: &Spn) -> Vec<Option<Vec<f64>>> {
    spn.columns
        .iter()
        .map(|m| if m.is_discrete() { m.numeric_domain() } else { Some(Vec::new()) })
        .collect()
}

/// `(E[X · 1{cs}], P(cs))` for a single numeric column.
pub fn column_moment(spn: &Spn, column: usize, cs: &ConditionSet) -> Result<(f64, f64), ModelError> {
    check_columns(spn, cs)?;
    let values = numeric_values(spn);
    column_moment_with(spn, column, cs, &values)
}

pub(crate) fn column_moment_with(
    spn: &Spn,
    column: usize,
    cs: &ConditionSet,
    values: &[Option<Vec<f64>>],
) -> Result<(f64, f64), ModelError> {
    let meta = spn
        .columns
        .get(column)
        .ok_or_else(|| ModelError::UnknownColumn(format!("#{column}")))?;
    if values[column].is_none() {
        return Err(ModelError::NotNumeric(meta.name.clone()));
    }
    node_moment(&spn.root, column, cs, values).ok_or_else(|| ModelError::OutOfScope(meta.name.clone()))
}

/// `E[target | cs]` for a ±-linear target.
pub fn expectation(spn: &Spn, target: &LinearForm, cs: &ConditionSet) -> Result<f64, ModelError> {
    check_columns(spn, cs)?;
    let values = numeric_values(spn);
    let p = node_probability(&spn.root, cs);
    if p <= 0.0 {
        return Err(ModelError::ZeroProbability);
    }
    let mut total = target.constant;
    for (&col, &coef) in &target.coefficients {
        let (m, p_col) = column_moment_with(spn, col, cs, &values)?;
        if p_col <= 0.0 {
            return Err(ModelError::ZeroProbability);
        }
        total += coef * (m / p_col);
    }
    Ok(total)
}

/// Candidate codes per column: every code with positive mass in some leaf.
fn support(node: &Node, column: usize, out: &mut Vec<bool>) {
    match node {
        Node::Discrete(l) if l.column == column => {
            if out.len() < l.probs.len() {
                out.resize(l.probs.len(), false);
            }
            for (c, p) in l.probs.iter().enumerate() {
                out[c] |= *p > 0.0;
            }
        }
        Node::Discrete(_) | Node::Continuous(_) => {}
        Node::Sum { children, .. } | Node::Product { children } => {
            children.iter().for_each(|c| support(c, column, out))
        }
    }
}

/// Group tuples with `P(cs ∧ g) > 0` and their probabilities, ordered by
/// label.
pub fn group_probabilities(
    spn: &Spn,
    group_cols: &[usize],
    cs: &ConditionSet,
) -> Result<Vec<(Vec<u32>, f64)>, ModelError> {
    check_columns(spn, cs)?;
    let scope = spn.scope();
    let mut candidates: Vec<Vec<u32>> = vec![Vec::new()];
    for &g in group_cols {
        let meta = spn
            .columns
            .get(g)
            .ok_or_else(|| ModelError::UnknownColumn(format!("#{g}")))?;
        if !meta.is_discrete() {
            return Err(ModelError::NotDiscrete(meta.name.clone()));
        }
        if !scope.contains(&g) {
            return Err(ModelError::OutOfScope(meta.name.clone()));
        }
        let mut sup = Vec::new();
        support(&spn.root, g, &mut sup);
        let allowed: Vec<u32> = (0..sup.len() as u32)
            .filter(|&c| sup[c as usize] && cs.get(g).is_none_or(|cond| cond.matches(c as f64)))
            .collect();
        candidates = candidates
            .into_iter()
            .flat_map(|prefix| {
                allowed.iter().map(move |&c| {
                    let mut k = prefix.clone();
                    k.push(c);
                    k
                })
            })
            .collect();
    }
    let mut out: Vec<(Vec<u32>, f64)> = candidates
        .into_iter()
        .filter_map(|codes| {
            let mut gcs = cs.clone();
            for (&col, &code) in group_cols.iter().zip(&codes) {
                gcs.and_condition(col, Condition::codes([code]));
            }
            let p = node_probability(&spn.root, &gcs);
            (p > 0.0).then_some((codes, p))
        })
        .collect();
    let label = |codes: &[u32]| -> Vec<String> {
        group_cols
            .iter()
            .zip(codes)
            .map(|(&c, &code)| spn.columns[c].label(code).to_string())
            .collect()
    };
    out.sort_by(|a, b| compare_keys(&label(&a.0), &label(&b.0)));
    Ok(out)
}

/// Group tuples (as codes) with positive probability under `cs`.
pub fn group_values(spn: &Spn, group_cols: &[usize], cs: &ConditionSet) -> Result<Vec<Vec<u32>>, ModelError> {
    Ok(group_probabilities(spn, group_cols, cs)?
        .into_iter()
        .map(|(k, _)| k)
        .collect())
}
