//! Benchmark harness: synthetic data, built-in workloads, quality metrics
//! and comparative runs of the model-based executors against exact answers.

pub mod runner;
pub mod synthetic;
pub mod workload;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use mbaqp_core::{ExecError, QueryError, Table, TableError};

pub use mbaqp_core::metrics::{avg_rel_error as metric_avg_rel_error, bin_missing as metric_bin_missing, skewness as metric_skewness};
pub use runner::{derive_seed, run_workload, CellRun, MetricsReport, SummaryRow, TrajectoryPoint};
pub use synthetic::{gen_synthetic, SyntheticParams, SYNTHETIC_TABLE};
pub use workload::{builtin_query, flights_queries, synthetic_queries, Engine, Workload, WorkloadQuery};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid workload: {0}")]
    Workload(String),
    #[error("query {id}: {source}")]
    Query { id: String, source: QueryError },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl BenchError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// IID resample of `table` with replacement to `target_n` rows.
pub fn resample_scale(table: &Table, target_n: usize, seed: u64) -> Result<Table, BenchError> {
    if table.row_count() == 0 {
        return Err(BenchError::Params("cannot resample an empty table".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = table.row_count();
    let rows: Vec<usize> = (0..target_n).map(|_| rng.random_range(0..n)).collect();
    Ok(table.take_rows(&rows))
}
