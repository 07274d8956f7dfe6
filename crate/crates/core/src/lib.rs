//! Approximate aggregate queries answered from a learned mixed sum-product
//! network instead of the base table.
//!
//! The pipeline is: load a [`Table`], [`learn`] an [`Spn`], parse a query
//! with [`query::parse`], compile it against the model schema, then run it
//! with [`exec_probability`] (closed form) or [`exec_sample`] (progressive,
//! from generated rows). [`exact_query`] and [`online_sample_query`] are the
//! reference and baseline executors over the table itself.

pub mod condition;
pub mod engine;
pub mod exact;
pub mod infer;
pub mod learn;
pub mod metrics;
pub mod query;
pub mod result;
pub mod sample;
pub mod schema;
pub mod spn;
pub mod table;

use thiserror::Error;

pub use condition::{Condition, ConditionSet, Interval, IntervalUnion, ValueSet};
pub use engine::{default_sampler, effective_sampler, exec_probability, exec_sample, Model, SampleExecution, StopRule};
pub use exact::{exact_query, online_sample_query, online_sample_query_batched, OnlineAggregation};
pub use infer::{column_moment, expectation, group_probabilities, group_values, probability};
pub use learn::{learn, learn_independence_baseline, LearnError, LearnParams};
pub use metrics::{avg_rel_error, bin_missing, skewness, MetricError};
pub use query::{compile, parse, CompiledQuery, QueryError, QuerySpec, UdfRegistry};
pub use result::{AggregateResult, ExecError, GroupValue, ResultMeta, Strategy};
pub use sample::{condition_weights, sample_conditioned, sample_random, SamplerKind};
pub use schema::{ColumnKind, ColumnMeta, ColumnType, FieldSpec};
pub use spn::{ModelError, Node, Spn};
pub use table::{load_csv, read_csv, Column, Table, TableError};

/// Any error raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
