//! `mbaqp`: ingest tables, learn models, answer queries, run benchmarks and
//! serve the HTTP API.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "mbaqp", version, about = "Model-based approximate query processing over sum-product networks")]
pub struct Cli {
    /// JSON file with defaults (data_dir, format, jobs, bind, port, max_upload_bytes)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a CSV file against a schema file and store it as a dataset
    Ingest(IngestArgs),
    /// Learn a model from a dataset
    Learn(LearnArgs),
    /// Answer a SQL aggregate query from a model
    Query(QueryArgs),
    /// Run a workload against exact answers and write reports
    Bench(BenchArgs),
    /// Generate the synthetic three-column table
    Synth(SynthArgs),
    /// Serve the HTTP API
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// CSV file with a header row
    #[arg(long, value_name = "FILE")]
    pub csv: PathBuf,
    /// Schema file: [{name, kind: discrete|continuous, domain?}]
    #[arg(long, value_name = "FILE")]
    pub schema: PathBuf,
    /// Directory to store the dataset in (default: $DATA_DIR/datasets)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dataset name (default: the CSV file stem)
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug)]
pub struct LearnArgs {
    /// Dataset CSV; its schema is read from --schema or <stem>.schema.json
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub schema: Option<PathBuf>,
    /// Dependence threshold for splitting columns, in (0, 1)
    #[arg(long, default_value_t = 0.3)]
    pub rdc_threshold: f64,
    /// Row count below which slices are fully factorized (default: max(200, rows/100))
    #[arg(long)]
    pub min_instance_slice: Option<usize>,
    /// Clusters per row split
    #[arg(long, default_value_t = 2)]
    pub cluster_k: usize,
    /// Learner seed (default: generated and printed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Learn the fully factorized baseline instead
    #[arg(long)]
    pub independent: bool,
    /// Model file to write (default: $DATA_DIR/models/<name>.json)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Auto,
    Probability,
    Random,
    Relevance,
    Stratified,
}

#[derive(Args, Debug)]
pub struct QueryArgs {
    /// Model file written by `learn`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// SELECT <agg> FROM <table> [WHERE ...] [GROUP BY ...]
    #[arg(long)]
    pub sql: String,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    pub strategy: StrategyArg,
    /// Rows generated by sample-based strategies
    #[arg(long, default_value_t = 10_000)]
    pub max_samples: usize,
    /// Rows between progressive results (default: max_samples / 10)
    #[arg(long)]
    pub emit_every: Option<usize>,
    /// Sampling seed (default: generated and printed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also run the query exactly on the source table and report errors
    #[arg(long)]
    pub compare_exact: bool,
    /// Source table for --compare-exact (default: $DATA_DIR/datasets/<table>.csv)
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Scalar function usable in the target, e.g. 'net(x, t) = x - x * t' (repeatable)
    #[arg(long, value_name = "DEF")]
    pub udf: Vec<String>,
    /// Print every progressive result to stderr
    #[arg(long)]
    pub progress: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Workload file, or `synthetic` / `flights` for the built-in query sets
    #[arg(long)]
    pub workload: String,
    /// Table CSV with its schema next to it (or --schema)
    #[arg(long, value_name = "FILE")]
    pub table: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub schema: Option<PathBuf>,
    /// Models as NAME=FILE or FILE (repeatable)
    #[arg(long = "models", value_name = "MODEL", num_args = 1..)]
    pub models: Vec<String>,
    /// Report directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Zero all wall-clock fields so reports are byte-stable
    #[arg(long)]
    pub omit_timing: bool,
    /// Worker threads for independent cells
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Override the workload's base seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of rows
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,
    /// Generator seed (default: generated and printed)
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV file to write; the schema goes to <stem>.schema.json
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Port (env PORT)
    #[arg(long)]
    pub port: Option<u16>,
    /// Address to bind (env BIND)
    #[arg(long)]
    pub bind: Option<String>,
    /// Directory for datasets and models (env DATA_DIR)
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Request body limit (env MAX_UPLOAD_BYTES)
    #[arg(long)]
    pub max_upload_bytes: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Engine(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Engine(_) => 4,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
