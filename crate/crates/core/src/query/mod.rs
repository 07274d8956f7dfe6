//! SQL front end: parsing, rendering, and compilation of filters and
//! group-bys into condition sets.

mod ast;
mod compile;
mod parser;
mod udf;

pub use ast::{Aggregate, ArithOp, BoolExpr, CmpOp, Expr, Literal, Predicate, QuerySpec};
pub use compile::{
    choose_strategy, compile, compile_filter, compile_predicate, CompiledBool, CompiledQuery,
    LinearForm, SignedConditionSets, SignedTerm, StrategyClass, MAX_SIGNED_TERMS,
};
pub use parser::{parse, parse_expr};
pub use udf::{Builtin, CompiledExpr, Udf, UdfRegistry};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unsupported feature at byte {pos}: {feature}")]
    Unsupported { feature: String, pos: usize },
    #[error("unsupported aggregate at byte {pos}: {name} (only COUNT, AVG and SUM are supported)")]
    UnsupportedAggregate { name: String, pos: usize },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{name}' expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("type mismatch on column '{column}': {message}")]
    TypeMismatch { column: String, message: String },
    #[error("column '{0}' has an unordered domain; ordering comparisons are not defined")]
    UnorderedDomain(String),
    #[error("column '{0}' is continuous and cannot be grouped by")]
    ContinuousGroup(String),
    #[error("column '{0}' is not numeric")]
    NonNumeric(String),
    #[error("disjunction expands to more than {0} signed terms")]
    ExpansionTooLarge(usize),
    #[error("UDF '{0}' is recursive or nested too deeply")]
    UdfRecursion(String),
}

impl QueryError {
    /// Byte offset into the SQL text, when the error has one.
    pub fn position(&self) -> Option<usize> {
        match self {
            QueryError::Syntax { pos, .. }
            | QueryError::Unsupported { pos, .. }
            | QueryError::UnsupportedAggregate { pos, .. } => Some(*pos),
            _ => None,
        }
    }
}
