//! Columnar in-memory tables and CSV ingestion.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::schema::{
    compare_labels, validate_schema, ColumnKind, ColumnMeta, ColumnType, FieldSpec,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: value '{value}' is not in the domain of column '{column}'")]
    Domain {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: empty cell in column '{column}' (NULL values are not supported)")]
    NullCell { line: u64, column: String },
    #[error("header mismatch: {0}")]
    Header(String),
    #[error("table is empty")]
    Empty,
}

/// Dense storage of a single column.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Dictionary codes into the column's domain.
    Discrete(Vec<u32>),
    Continuous(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Discrete(v) => v.len(),
            Column::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell as `f64`; discrete cells yield their code.
    #[inline]
    pub fn get(&self, row: usize) -> f64 {
        match self {
            Column::Discrete(v) => v[row] as f64,
            Column::Continuous(v) => v[row],
        }
    }
}

/// An immutable relation with typed columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    name: String,
    schema: Vec<ColumnMeta>,
    columns: Vec<Column>,
    row_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnStats {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Table {
    /// Builds a table, checking lengths, codes and schema invariants.
    /// Continuous ranges in the schema are recomputed from the data.
    pub fn new(
        name: impl Into<String>,
        mut schema: Vec<ColumnMeta>,
        columns: Vec<Column>,
    ) -> Result<Table, TableError> {
        if schema.len() != columns.len() {
            return Err(TableError::Schema(format!(
                "{} schema columns but {} data columns",
                schema.len(),
                columns.len()
            )));
        }
        let row_count = columns.first().map_or(0, Column::len);
        for (meta, col) in schema.iter_mut().zip(&columns) {
            if col.len() != row_count {
                return Err(TableError::Schema(format!(
                    "column '{}' has {} rows, expected {}",
                    meta.name,
                    col.len(),
                    row_count
                )));
            }
            match (&mut meta.ty, col) {
                (ColumnType::Discrete { domain }, Column::Discrete(codes)) => {
                    if let Some(bad) = codes.iter().find(|c| **c as usize >= domain.len()) {
                        return Err(TableError::Schema(format!(
                            "column '{}' holds code {} outside its domain of {} values",
                            meta.name,
                            bad,
                            domain.len()
                        )));
                    }
                }
                (ColumnType::Continuous { min, max }, Column::Continuous(values)) => {
                    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
                        return Err(TableError::Schema(format!(
                            "column '{}' holds non-finite value {}",
                            meta.name, bad
                        )));
                    }
                    let (lo, hi) = min_max(values);
                    *min = lo;
                    *max = hi;
                }
                _ => {
                    return Err(TableError::Schema(format!(
                        "column '{}' storage does not match its kind",
                        meta.name
                    )))
                }
            }
        }
        validate_schema(&schema)?;
        Ok(Table {
            name: name.into(),
            schema,
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn schema(&self) -> &[ColumnMeta] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    /// Writes row `i` into `buf` (one `f64` per column; discrete as code).
    #[inline]
    pub fn read_row(&self, i: usize, buf: &mut [f64]) {
        for (slot, col) in buf.iter_mut().zip(&self.columns) {
            *slot = col.get(i);
        }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        let mut buf = vec![0.0; self.width()];
        self.read_row(i, &mut buf);
        buf
    }

    /// A new table holding the given rows in order (repeats allowed).
    pub fn take_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Discrete(v) => Column::Discrete(rows.iter().map(|&r| v[r]).collect()),
                Column::Continuous(v) => Column::Continuous(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        Table::new(self.name.clone(), self.schema.clone(), columns)
            .expect("row subset of a valid table is valid")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Table {
        self.name = name.into();
        self
    }

    pub fn stats(&self) -> Vec<ColumnStats> {
        self.schema
            .iter()
            .map(|m| match &m.ty {
                ColumnType::Discrete { domain } => ColumnStats {
                    name: m.name.clone(),
                    kind: ColumnKind::Discrete,
                    domain: Some(domain.clone()),
                    min: None,
                    max: None,
                },
                ColumnType::Continuous { min, max } => ColumnStats {
                    name: m.name.clone(),
                    kind: ColumnKind::Continuous,
                    domain: None,
                    min: Some(*min),
                    max: Some(*max),
                },
            })
            .collect()
    }

    /// Writes the table as CSV with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TableError> {
        let io = |e: csv::Error| TableError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.schema.iter().map(|m| m.name.as_str()))
            .map_err(io)?;
        let mut record: Vec<String> = vec![String::new(); self.width()];
        for r in 0..self.row_count {
            for (c, (meta, col)) in self.schema.iter().zip(&self.columns).enumerate() {
                record[c] = match col {
                    Column::Discrete(v) => meta.label(v[r]).to_string(),
                    Column::Continuous(v) => format!("{:?}", v[r]),
                };
            }
            w.write_record(&record).map_err(io)?;
        }
        w.flush().map_err(|e| TableError::Io {
            path: "<csv>".into(),
            message: e.to_string(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), TableError> {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn io_error(path: &Path, e: std::io::Error) -> TableError {
    TableError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Loads a CSV file; the table is named after the file stem.
pub fn load_csv(path: &Path, fields: &[FieldSpec]) -> Result<Table, TableError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let name = path
        .file_stem()
        .map_or_else(|| "table".to_string(), |s| s.to_string_lossy().into_owned());
    read_csv(file, &name, fields)
}

/// Parses CSV text with a header row against a schema-file description.
pub fn read_csv<R: Read>(input: R, name: &str, fields: &[FieldSpec]) -> Result<Table, TableError> {
    let mut seen = HashSet::new();
    for f in fields {
        if !seen.insert(f.name.as_str()) {
            return Err(TableError::Schema(format!("duplicate column name '{}'", f.name)));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Fields)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| TableError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() != fields.len() {
        return Err(TableError::Header(format!(
            "CSV has {} columns, schema declares {}",
            header.len(),
            fields.len()
        )));
    }
    // position of each schema field within the CSV record
    let mut source = Vec::with_capacity(fields.len());
    for f in fields {
        let pos = header.iter().position(|h| h == f.name).ok_or_else(|| {
            TableError::Header(format!("column '{}' missing from CSV header", f.name))
        })?;
        source.push(pos);
    }

    enum Builder {
        Declared {
            lookup: HashMap<String, u32>,
            codes: Vec<u32>,
        },
        Inferred {
            cells: Vec<String>,
        },
        Continuous(Vec<f64>),
    }
    let mut builders = fields
        .iter()
        .map(|f| {
            Ok(match f.kind {
                ColumnKind::Continuous => Builder::Continuous(Vec::new()),
                ColumnKind::Discrete => match f.declared_domain()? {
                    Some(domain) => Builder::Declared {
                        lookup: domain
                            .into_iter()
                            .enumerate()
                            .map(|(i, v)| (v, i as u32))
                            .collect(),
                        codes: Vec::new(),
                    },
                    None => Builder::Inferred { cells: Vec::new() },
                },
            })
        })
        .collect::<Result<Vec<_>, TableError>>()?;

    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| TableError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        for ((f, b), &pos) in fields.iter().zip(builders.iter_mut()).zip(&source) {
            let cell = record.get(pos).unwrap_or("");
            if cell.is_empty() {
                return Err(TableError::NullCell {
                    line,
                    column: f.name.clone(),
                });
            }
            match b {
                Builder::Continuous(values) => {
                    let v: f64 = cell.parse().map_err(|_| TableError::Parse {
                        line,
                        message: format!("column '{}': '{}' is not a number", f.name, cell),
                    })?;
                    if !v.is_finite() {
                        return Err(TableError::Parse {
                            line,
                            message: format!("column '{}': non-finite value '{}'", f.name, cell),
                        });
                    }
                    values.push(v);
                }
                Builder::Declared { lookup, codes } => {
                    let code = lookup.get(cell).ok_or_else(|| TableError::Domain {
                        line,
                        column: f.name.clone(),
                        value: cell.to_string(),
                    })?;
                    codes.push(*code);
                }
                Builder::Inferred { cells } => cells.push(cell.to_string()),
            }
        }
    }

    let mut schema = Vec::with_capacity(fields.len());
    let mut columns = Vec::with_capacity(fields.len());
    for (f, b) in fields.iter().zip(builders) {
        match b {
            Builder::Continuous(values) => {
                let (lo, hi) = min_max(&values);
                schema.push(ColumnMeta::continuous(&f.name, lo, hi));
                columns.push(Column::Continuous(values));
            }
            Builder::Declared { lookup, codes } => {
                let mut domain = vec![String::new(); lookup.len()];
                for (v, i) in lookup {
                    domain[i as usize] = v;
                }
                schema.push(ColumnMeta::discrete(&f.name, domain));
                columns.push(Column::Discrete(codes));
            }
            Builder::Inferred { cells } => {
                let mut domain: Vec<String> = cells
                    .iter()
                    .cloned()
                    .collect::<HashSet<_>>()
                    .into_iter()
                    .collect();
                domain.sort_by(|a, b| compare_labels(a, b));
                if domain.is_empty() {
                    return Err(TableError::Schema(format!(
                        "column '{}': cannot infer a domain from an empty table",
                        f.name
                    )));
                }
                let lookup: HashMap<&str, u32> = domain
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v.as_str(), i as u32))
                    .collect();
                let codes = cells.iter().map(|c| lookup[c.as_str()]).collect();
                schema.push(ColumnMeta::discrete(&f.name, domain));
                columns.push(Column::Discrete(codes));
            }
        }
    }
    Table::new(name, schema, columns)
}
