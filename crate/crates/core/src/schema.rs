//! Column metadata and the JSON schema-file format.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::table::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Discrete,
    Continuous,
}

/// Statistical type of a column together with its value domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnType {
    /// Dictionary-encoded column; a value's code is its index in `domain`.
    Discrete { domain: Vec<String> },
    /// Real-valued column with its observed range.
    Continuous { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(flatten)]
    pub ty: ColumnType,
}

impl ColumnMeta {
    pub fn discrete(name: impl Into<String>, domain: Vec<String>) -> Self {
        ColumnMeta {
            name: name.into(),
            ty: ColumnType::Discrete { domain },
        }
    }

    pub fn continuous(name: impl Into<String>, min: f64, max: f64) -> Self {
        ColumnMeta {
            name: name.into(),
            ty: ColumnType::Continuous { min, max },
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self.ty {
            ColumnType::Discrete { .. } => ColumnKind::Discrete,
            ColumnType::Continuous { .. } => ColumnKind::Continuous,
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.kind() == ColumnKind::Discrete
    }

    pub fn domain(&self) -> Option<&[String]> {
        match &self.ty {
            ColumnType::Discrete { domain } => Some(domain),
            ColumnType::Continuous { .. } => None,
        }
    }

    pub fn domain_len(&self) -> usize {
        self.domain().map_or(0, <[String]>::len)
    }

    pub fn code_of(&self, value: &str) -> Option<u32> {
        self.domain()?
            .iter()
            .position(|v| v == value)
            .map(|i| i as u32)
    }

    pub fn label(&self, code: u32) -> &str {
        self.domain()
            .and_then(|d| d.get(code as usize))
            .map_or("?", String::as_str)
    }

    /// Numeric reading of every domain value, when all of them parse.
    pub fn numeric_domain(&self) -> Option<Vec<f64>> {
        self.domain()?
            .iter()
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect()
    }

    /// A discrete domain is ordered when every value is numeric.
    pub fn is_ordered(&self) -> bool {
        match self.ty {
            ColumnType::Continuous { .. } => true,
            ColumnType::Discrete { .. } => self.numeric_domain().is_some(),
        }
    }

    pub fn validate(&self) -> Result<(), TableError> {
        match &self.ty {
            ColumnType::Discrete { domain } => {
                if domain.is_empty() {
                    return Err(TableError::Schema(format!(
                        "discrete column '{}' has an empty domain",
                        self.name
                    )));
                }
                let mut seen = HashSet::new();
                for v in domain {
                    if !seen.insert(v) {
                        return Err(TableError::Schema(format!(
                            "discrete column '{}' repeats domain value '{}'",
                            self.name, v
                        )));
                    }
                }
            }
            ColumnType::Continuous { min, max } => {
                if min > max {
                    return Err(TableError::Schema(format!(
                        "continuous column '{}' has min {} > max {}",
                        self.name, min, max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Orders cell labels: numeric labels first in numeric order, then the rest
/// lexicographically.
pub fn compare_labels(a: &str, b: &str) -> Ordering {
    match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

pub fn compare_keys(a: &[String], b: &[String]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match compare_labels(x, y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

pub fn validate_schema(schema: &[ColumnMeta]) -> Result<(), TableError> {
    let mut names = HashSet::new();
    for col in schema {
        if !names.insert(col.name.as_str()) {
            return Err(TableError::Schema(format!(
                "duplicate column name '{}'",
                col.name
            )));
        }
        col.validate()?;
    }
    Ok(())
}

pub fn column_index(schema: &[ColumnMeta], name: &str) -> Option<usize> {
    schema
        .iter()
        .position(|c| c.name == name)
        .or_else(|| {
            let mut hits = schema
                .iter()
                .enumerate()
                .filter(|(_, c)| c.name.eq_ignore_ascii_case(name));
            match (hits.next(), hits.next()) {
                (Some((i, _)), None) => Some(i),
                _ => None,
            }
        })
}

/// Domain declaration in a schema file: an explicit list or `"infer"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Values(Vec<serde_json::Value>),
    Keyword(String),
}

/// One entry of a schema file: `{name, kind, domain?}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
}

impl FieldSpec {
    /// Declared domain values, or `None` when the domain is to be inferred.
    pub fn declared_domain(&self) -> Result<Option<Vec<String>>, TableError> {
        match &self.domain {
            None => Ok(None),
            Some(DomainSpec::Keyword(k)) if k.eq_ignore_ascii_case("infer") => Ok(None),
            Some(DomainSpec::Keyword(k)) => Err(TableError::Schema(format!(
                "column '{}': unknown domain keyword '{}'",
                self.name, k
            ))),
            Some(DomainSpec::Values(values)) => values
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    serde_json::Value::Bool(b) => Ok(b.to_string()),
                    other => Err(TableError::Schema(format!(
                        "column '{}': unsupported domain value {}",
                        self.name, other
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

pub fn parse_schema_json(text: &str) -> Result<Vec<FieldSpec>, TableError> {
    serde_json::from_str(text).map_err(|e| TableError::Schema(format!("schema file: {e}")))
}

/// Resolves a column schema back into a schema-file entry with a concrete domain.
pub fn field_spec_of(meta: &ColumnMeta) -> FieldSpec {
    FieldSpec {
        name: meta.name.clone(),
        kind: meta.kind(),
        domain: meta.domain().map(|d| {
            DomainSpec::Values(d.iter().map(|v| serde_json::Value::String(v.clone())).collect())
        }),
    }
}
