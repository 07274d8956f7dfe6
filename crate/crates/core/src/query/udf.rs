//! Registered scalar functions and compiled target expressions.

use std::collections::HashMap;

use super::ast::{ArithOp, Expr};
use super::parser::parse_expr;
use super::QueryError;
use crate::schema::{column_index, ColumnMeta};

const MAX_INLINE_DEPTH: usize = 32;

/// A named pure scalar expression, e.g. `net(x, tax) = x - x * tax`.
#[derive(Debug, Clone, PartialEq)]
pub struct Udf {
    pub params: Vec<String>,
    pub body: Expr,
}

#[derive(Debug, Clone, Default)]
pub struct UdfRegistry {
    udfs: HashMap<String, Udf>,
}

impl UdfRegistry {
    pub fn new() -> Self {
        UdfRegistry::default()
    }

    /// Registers `name(params...) = body`, replacing any earlier definition.
    pub fn register(&mut self, name: &str, params: &[&str], body: &str) -> Result<(), QueryError> {
        let name = name.to_ascii_lowercase();
        if Builtin::from_name(&name).is_some() {
            return Err(QueryError::Syntax {
                pos: 0,
                message: format!("'{name}' is a built-in function"),
            });
        }
        let body = parse_expr(body)?;
        self.udfs.insert(
            name,
            Udf {
                params: params.iter().map(|p| p.to_string()).collect(),
                body,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Udf> {
        self.udfs.get(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.udfs.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Abs,
    Log,
    Min,
    Max,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Builtin> {
        match name.to_ascii_lowercase().as_str() {
            "abs" => Some(Builtin::Abs),
            "log" | "ln" => Some(Builtin::Log),
            "min" | "least" => Some(Builtin::Min),
            "max" | "greatest" => Some(Builtin::Max),
            _ => None,
        }
    }
}

/// Target expression with columns resolved to schema indices and UDFs inlined.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledExpr {
    Column(usize),
    Const(f64),
    Neg(Box<CompiledExpr>),
    Binary(ArithOp, Box<CompiledExpr>, Box<CompiledExpr>),
    Builtin(Builtin, Vec<CompiledExpr>),
}

/// Per-column numeric readings: continuous cells as-is, discrete codes mapped
/// through their numeric domain.
#[derive(Debug, Clone)]
pub(crate) struct NumericView {
    maps: Vec<Option<Vec<f64>>>,
}

impl NumericView {
    pub(crate) fn new(schema: &[ColumnMeta]) -> Self {
        NumericView {
            maps: schema.iter().map(ColumnMeta::numeric_domain).collect(),
        }
    }

    #[inline]
    pub(crate) fn value(&self, row: &[f64], col: usize) -> f64 {
        match &self.maps[col] {
            Some(map) => map.get(row[col] as usize).copied().unwrap_or(f64::NAN),
            None => row[col],
        }
    }
}

impl CompiledExpr {
    pub(crate) fn compile(
        expr: &Expr,
        schema: &[ColumnMeta],
        udfs: &UdfRegistry,
    ) -> Result<CompiledExpr, QueryError> {
        compile_inner(expr, schema, udfs, &HashMap::new(), 0)
    }

    pub fn columns(&self, out: &mut Vec<usize>) {
        match self {
            CompiledExpr::Column(c) => out.push(*c),
            CompiledExpr::Const(_) => {}
            CompiledExpr::Neg(e) => e.columns(out),
            CompiledExpr::Binary(_, a, b) => {
                a.columns(out);
                b.columns(out);
            }
            CompiledExpr::Builtin(_, args) => args.iter().for_each(|a| a.columns(out)),
        }
    }

    /// Evaluates on a full-width row; errors on non-finite results.
    pub(crate) fn eval(&self, row: &[f64], view: &NumericView) -> Result<f64, String> {
        let v = self.eval_raw(row, view)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expression produced non-finite value {v}"))
        }
    }

    fn eval_raw(&self, row: &[f64], view: &NumericView) -> Result<f64, String> {
        Ok(match self {
            CompiledExpr::Column(c) => view.value(row, *c),
            CompiledExpr::Const(x) => *x,
            CompiledExpr::Neg(e) => -e.eval_raw(row, view)?,
            CompiledExpr::Binary(op, a, b) => {
                let x = a.eval_raw(row, view)?;
                let y = b.eval_raw(row, view)?;
                match op {
                    ArithOp::Add => x + y,
                    ArithOp::Sub => x - y,
                    ArithOp::Mul => x * y,
                    ArithOp::Div => {
                        if y == 0.0 {
                            return Err("division by zero".into());
                        }
                        x / y
                    }
                }
            }
            CompiledExpr::Builtin(f, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_raw(row, view))
                    .collect::<Result<Vec<_>, _>>()?;
                match f {
                    Builtin::Abs => vals[0].abs(),
                    Builtin::Log => {
                        if vals[0] <= 0.0 {
                            return Err(format!("log of non-positive value {}", vals[0]));
                        }
                        vals[0].ln()
                    }
                    Builtin::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Builtin::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                }
            }
        })
    }
}

fn compile_inner(
    expr: &Expr,
    schema: &[ColumnMeta],
    udfs: &UdfRegistry,
    env: &HashMap<String, CompiledExpr>,
    depth: usize,
) -> Result<CompiledExpr, QueryError> {
    Ok(match expr {
        Expr::Column(name) => {
            if let Some(bound) = env.get(name) {
                return Ok(bound.clone());
            }
            let idx = column_index(schema, name)
                .ok_or_else(|| QueryError::UnknownColumn(name.clone()))?;
            if !schema[idx].is_ordered() {
                return Err(QueryError::NonNumeric(schema[idx].name.clone()));
            }
            CompiledExpr::Column(idx)
        }
        Expr::Number(x) => CompiledExpr::Const(*x),
        Expr::Neg(e) => CompiledExpr::Neg(Box::new(compile_inner(e, schema, udfs, env, depth)?)),
        Expr::Binary { op, lhs, rhs } => CompiledExpr::Binary(
            *op,
            Box::new(compile_inner(lhs, schema, udfs, env, depth)?),
            Box::new(compile_inner(rhs, schema, udfs, env, depth)?),
        ),
        Expr::Call { name, args } => {
            let compiled_args = args
                .iter()
                .map(|a| compile_inner(a, schema, udfs, env, depth))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(b) = Builtin::from_name(name) {
                let ok = match b {
                    Builtin::Abs | Builtin::Log => compiled_args.len() == 1,
                    Builtin::Min | Builtin::Max => !compiled_args.is_empty(),
                };
                if !ok {
                    return Err(QueryError::Arity {
                        name: name.clone(),
                        expected: 1,
                        got: compiled_args.len(),
                    });
                }
                CompiledExpr::Builtin(b, compiled_args)
            } else if let Some(udf) = udfs.get(name) {
                if depth >= MAX_INLINE_DEPTH {
                    return Err(QueryError::UdfRecursion(name.clone()));
                }
                if udf.params.len() != compiled_args.len() {
                    return Err(QueryError::Arity {
                        name: name.clone(),
                        expected: udf.params.len(),
                        got: compiled_args.len(),
                    });
                }
                let inner_env: HashMap<String, CompiledExpr> =
                    udf.params.iter().cloned().zip(compiled_args).collect();
                compile_inner(&udf.body, schema, udfs, &inner_env, depth + 1)?
            } else {
                return Err(QueryError::UnknownFunction(name.clone()));
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<ColumnMeta> {
        vec![
            ColumnMeta::continuous("x", 0.0, 10.0),
            ColumnMeta::discrete("d", vec!["1".into(), "5".into()]),
            ColumnMeta::discrete("s", vec!["a".into(), "b".into()]),
        ]
    }

    #[test]
    fn udf_is_inlined_and_evaluated() {
        let mut reg = UdfRegistry::new();
        reg.register("net", &["v", "rate"], "v - v * rate").unwrap();
        let e = CompiledExpr::compile(&parse_expr("net(x, 0.25) + d").unwrap(), &schema(), &reg)
            .unwrap();
        let view = NumericView::new(&schema());
        // x = 8, d code 1 -> 5
        assert_eq!(e.eval(&[8.0, 1.0, 0.0], &view).unwrap(), 6.0 + 5.0);
    }

    #[test]
    fn non_numeric_discrete_rejected() {
        let err = CompiledExpr::compile(&Expr::column("s"), &schema(), &UdfRegistry::new());
        assert_eq!(err, Err(QueryError::NonNumeric("s".into())));
    }

    #[test]
    fn recursive_udf_detected() {
        let mut reg = UdfRegistry::new();
        reg.register("f", &["v"], "f(v) + 1").unwrap();
        let err = CompiledExpr::compile(&parse_expr("f(x)").unwrap(), &schema(), &reg);
        assert!(matches!(err, Err(QueryError::UdfRecursion(_))));
    }

    #[test]
    fn eval_errors_surface() {
        let view = NumericView::new(&schema());
        let e = CompiledExpr::compile(&parse_expr("log(x - 8)").unwrap(), &schema(), &UdfRegistry::new())
            .unwrap();
        assert!(e.eval(&[8.0, 0.0, 0.0], &view).is_err());
        let e = CompiledExpr::compile(&parse_expr("1 / (x - 8)").unwrap(), &schema(), &UdfRegistry::new())
            .unwrap();
        assert!(e.eval(&[8.0, 0.0, 0.0], &view).is_err());
    }
}
