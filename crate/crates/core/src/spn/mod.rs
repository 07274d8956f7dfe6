//! Sum-product network structure, validation, structural marginalization
//! and the model file format.

mod leaf;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use leaf::{ContinuousLeaf, DiscreteLeaf, LAPLACE_PSEUDO_COUNT, MAX_BINS, MAX_LEAF_SAMPLE};
pub(crate) use leaf::pick_weighted;

use crate::learn::LearnParams;
use crate::schema::{column_index, validate_schema, ColumnMeta, ColumnType};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model file is malformed: {0}")]
    Parse(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model schema mismatch: {0}")]
    Schema(String),
    #[error("model violates structural invariants: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("cannot marginalize to an empty column set")]
    EmptyKeep,
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{0}' is not modeled by this network")]
    OutOfScope(String),
    #[error("column '{0}' is not discrete")]
    NotDiscrete(String),
    #[error("column '{0}' is not numeric")]
    NotNumeric(String),
    #[error("multiplier requested for zero samples")]
    NoSamples,
    #[error("condition has zero probability under the model")]
    ZeroProbability,
    #[error("leaf on column {leaf} cannot evaluate a condition on column {condition}")]
    ColumnMismatch { leaf: usize, condition: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Sum { weights: Vec<f64>, children: Vec<Node> },
    Product { children: Vec<Node> },
    Discrete(DiscreteLeaf),
    Continuous(ContinuousLeaf),
}

impl Node {
    pub fn sum(weights: Vec<f64>, children: Vec<Node>) -> Node {
        Node::Sum { weights, children }
    }

    pub fn product(children: Vec<Node>) -> Node {
        Node::Product { children }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Discrete(_) | Node::Continuous(_))
    }

    /// Column of a leaf node.
    pub fn leaf_column(&self) -> Option<usize> {
        match self {
            Node::Discrete(l) => Some(l.column),
            Node::Continuous(l) => Some(l.column()),
            _ => None,
        }
    }

    pub fn children(&self) -> &[Node] {
        match self {
            Node::Sum { children, .. } | Node::Product { children } => children,
            _ => &[],
        }
    }

    /// Columns occurring in the leaves below this node.
    pub fn scope(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_scope(&mut out);
        out
    }

    fn collect_scope(&self, out: &mut BTreeSet<usize>) {
        match self.leaf_column() {
            Some(c) => {
                out.insert(c);
            }
            None => self.children().iter().for_each(|c| c.collect_scope(out)),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(Node::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Node::depth).max().unwrap_or(0)
    }

    fn prune(&self, keep: &BTreeSet<usize>) -> Option<Node> {
        match self {
            Node::Discrete(_) | Node::Continuous(_) => {
                keep.contains(&self.leaf_column().expect("leaf")).then(|| self.clone())
            }
            Node::Product { children } => {
                let mut kept: Vec<Node> = children.iter().filter_map(|c| c.prune(keep)).collect();
                match kept.len() {
                    0 => None,
                    1 => kept.pop(),
                    _ => Some(Node::Product { children: kept }),
                }
            }
            Node::Sum { weights, children } => {
                let kept: Vec<Node> = children.iter().filter_map(|c| c.prune(keep)).collect();
                // complete sums prune either every child or none
                if kept.len() != children.len() {
                    return None;
                }
                Some(Node::Sum {
                    weights: weights.clone(),
                    children: kept,
                })
            }
        }
    }

    fn check(&self, schema: &[ColumnMeta], path: &str, out: &mut Vec<String>) -> BTreeSet<usize> {
        match self {
            Node::Discrete(l) => {
                match schema.get(l.column).map(|m| &m.ty) {
                    Some(ColumnType::Discrete { domain }) => {
                        if l.probs.len() != domain.len() {
                            out.push(format!(
                                "{path}: discrete leaf has {} masses for a domain of {}",
                                l.probs.len(),
                                domain.len()
                            ));
                        }
                    }
                    _ => out.push(format!("{path}: discrete leaf on non-discrete column {}", l.column)),
                }
                if l.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    out.push(format!("{path}: leaf normalization: negative or non-finite mass"));
                }
                let total: f64 = l.probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    out.push(format!("{path}: leaf normalization: masses sum to {total}"));
                }
                BTreeSet::from([l.column])
            }
            Node::Continuous(l) => {
                if !matches!(schema.get(l.column()).map(|m| &m.ty), Some(ColumnType::Continuous { .. })) {
                    out.push(format!("{path}: continuous leaf on non-continuous column {}", l.column()));
                }
                let b = l.breaks();
                if b.len() < 2 || l.densities().len() != b.len() {
                    out.push(format!("{path}: continuous leaf needs >= 2 breaks with one density each"));
                } else {
                    if b.iter().any(|x| !x.is_finite()) || b.windows(2).any(|w| w[0] >= w[1]) {
                        out.push(format!("{path}: breaks are not strictly increasing"));
                    }
                    if l.densities().iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                        out.push(format!("{path}: leaf normalization: negative or non-finite density"));
                    }
                    if (l.total_mass() - 1.0).abs() > 1e-6 {
                        out.push(format!(
                            "{path}: leaf normalization: density integrates to {}",
                            l.total_mass()
                        ));
                    }
                    let s = l.sample();
                    if s.is_empty() {
                        out.push(format!("{path}: materialized sample is empty"));
                    } else if s[0] < b[0] || s[s.len() - 1] > b[b.len() - 1] {
                        out.push(format!("{path}: materialized sample outside the leaf support"));
                    }
                }
                BTreeSet::from([l.column()])
            }
            Node::Sum { weights, children } => {
                if children.len() < 2 {
                    out.push(format!("{path}: sum node has {} children", children.len()));
                }
                if weights.len() != children.len() {
                    out.push(format!(
                        "{path}: sum node has {} weights for {} children",
                        weights.len(),
                        children.len()
                    ));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    out.push(format!("{path}: weight normalization: non-positive weight"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    out.push(format!("{path}: weight normalization: weights sum to {total}"));
                }
                let scopes: Vec<_> = children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c.check(schema, &format!("{path}/{i}"), out))
                    .collect();
                if scopes.windows(2).any(|w| w[0] != w[1]) {
                    out.push(format!("{path}: completeness: sum children have different scopes"));
                }
                scopes.into_iter().next().unwrap_or_default()
            }
            Node::Product { children } => {
                if children.len() < 2 {
                    out.push(format!("{path}: product node has {} children", children.len()));
                }
                let mut union = BTreeSet::new();
                let mut overlap = false;
                for (i, c) in children.iter().enumerate() {
                    for col in c.check(schema, &format!("{path}/{i}"), out) {
                        overlap |= !union.insert(col);
                    }
                }
                if overlap {
                    out.push(format!("{path}: decomposability: product children share columns"));
                }
                union
            }
        }
    }
}

/// How a model was built, recorded in the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Learnspn,
    Independence,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spn {
    pub table: String,
    pub columns: Vec<ColumnMeta>,
    pub row_count: u64,
    pub learner: Learner,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner_params: Option<LearnParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub built_at: Option<String>,
    pub root: Node,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    version: u32,
    table: &'a str,
    columns: &'a [ColumnMeta],
    row_count: u64,
    learner: &'a Learner,
    #[serde(skip_serializing_if = "Option::is_none")]
    learner_params: Option<&'a LearnParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    built_at: Option<&'a str>,
    root: &'a Node,
}

impl<'a> ModelFileRef<'a> {
    fn of(spn: &'a Spn) -> Self {
        ModelFileRef {
            version: MODEL_FORMAT_VERSION,
            table: &spn.table,
            columns: &spn.columns,
            row_count: spn.row_count,
            learner: &spn.learner,
            learner_params: spn.learner_params.as_ref(),
            built_at: spn.built_at.as_deref(),
            root: &spn.root,
        }
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<u32>,
}

impl Spn {
    /// A hand-assembled model over `columns`.
    pub fn new(table: impl Into<String>, columns: Vec<ColumnMeta>, row_count: u64, root: Node) -> Spn {
        Spn {
            table: table.into(),
            columns,
            row_count,
            learner: Learner::Manual,
            learner_params: None,
            built_at: None,
            root,
        }
    }

    pub fn scope(&self) -> BTreeSet<usize> {
        self.root.scope()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        column_index(&self.columns, name)
    }

    /// Structural violations; empty means the network is a valid distribution.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = validate_schema(&self.columns) {
            out.push(e.to_string());
        }
        let scope = self.root.check(&self.columns, "root", &mut out);
        if let Some(bad) = scope.iter().find(|c| **c >= self.columns.len()) {
            out.push(format!("leaf references column {bad} outside the schema"));
        }
        out
    }

    /// Prunes every leaf outside `keep` and collapses single-child products.
    /// Column indices keep referring to the full schema.
    pub fn marginalize(&self, keep: &BTreeSet<usize>) -> Result<Spn, ModelError> {
        if keep.is_empty() {
            return Err(ModelError::EmptyKeep);
        }
        let scope = self.scope();
        if let Some(c) = keep.iter().find(|c| !scope.contains(c)) {
            let name = self
                .columns
                .get(*c)
                .map_or_else(|| format!("#{c}"), |m| m.name.clone());
            return Err(ModelError::OutOfScope(name));
        }
        let root = self.root.prune(keep).expect("keep is a nonempty subset of the scope");
        Ok(Spn {
            root,
            ..self.clone_header()
        })
    }

    /// Marginalizes to named columns.
    pub fn marginalize_names(&self, names: &[&str]) -> Result<Spn, ModelError> {
        let keep = names
            .iter()
            .map(|n| self.column(n).ok_or_else(|| ModelError::UnknownColumn(n.to_string())))
            .collect::<Result<BTreeSet<_>, _>>()?;
        self.marginalize(&keep)
    }

    pub(crate) fn clone_header(&self) -> Spn {
        Spn {
            table: self.table.clone(),
            columns: self.columns.clone(),
            row_count: self.row_count,
            learner: self.learner.clone(),
            learner_params: self.learner_params.clone(),
            built_at: self.built_at.clone(),
            root: Node::Product { children: Vec::new() },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelFileRef::of(self))
        .expect("model serialization cannot fail")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&ModelFileRef::of(self))
        .expect("model serialization cannot fail")
    }

    /// Parses and validates a model file.
    pub fn from_json(text: &str) -> Result<Spn, ModelError> {
        let probe: VersionProbe =
            serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        match probe.version {
            Some(MODEL_FORMAT_VERSION) => {}
            Some(found) => {
                return Err(ModelError::Version {
                    found,
                    expected: MODEL_FORMAT_VERSION,
                })
            }
            None => return Err(ModelError::Parse("missing field `version`".into())),
        }
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let spn = Spn::deserialize(&mut de).map_err(|e| ModelError::Parse(e.to_string()))?;
        de.end().map_err(|e| ModelError::Parse(e.to_string()))?;
        let violations = spn.validate();
        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations));
        }
        if spn.scope().len() != spn.columns.len() {
            return Err(ModelError::Schema(format!(
                "root covers {} of {} columns",
                spn.scope().len(),
                spn.columns.len()
            )));
        }
        Ok(spn)
    }

    /// Checks that the model can answer queries over `schema`.
    pub fn check_schema(&self, schema: &[ColumnMeta]) -> Result<(), ModelError> {
        if schema.len() != self.columns.len() {
            return Err(ModelError::Schema(format!(
                "table has {} columns, model has {}",
                schema.len(),
                self.columns.len()
            )));
        }
        for (a, b) in schema.iter().zip(&self.columns) {
            if a.name != b.name || a.kind() != b.kind() || a.domain() != b.domain() {
                return Err(ModelError::Schema(format!("column '{}' differs", a.name)));
            }
        }
        Ok(())
    }

    /// Content hash of the model (excluding the build timestamp).
    pub fn model_id(&self) -> String {
        let mut canonical = self.clone_header();
        canonical.built_at = None;
        canonical.root = self.root.clone();
        let digest = Sha256::digest(canonical.to_json().as_bytes());
        hex::encode(&digest[..8])
    }
}
