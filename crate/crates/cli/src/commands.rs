use std::path::{Path, PathBuf};

use serde::Serialize;

use mbaqp_bench::{
    builtin_query, flights_queries, gen_synthetic, run_workload, synthetic_queries, BenchError, SyntheticParams,
    Workload, WorkloadQuery,
};
use mbaqp_core::learn::learn_independence_baseline_seeded;
use mbaqp_core::metrics::relative_errors;
use mbaqp_core::query::{choose_strategy, StrategyClass};
use mbaqp_core::schema::{field_spec_of, parse_schema_json, FieldSpec};
use mbaqp_core::table::ColumnStats;
use mbaqp_core::{
    avg_rel_error, bin_missing, default_sampler, exact_query, learn, load_csv, parse, AggregateResult, ExecError,
    LearnError, LearnParams, Model, QueryError, SamplerKind, Spn, StopRule, Table, TableError, UdfRegistry,
};
use mbaqp_service::{ServiceConfig, ServiceError};

use crate::config::FileConfig;
use crate::output;
use crate::{BenchArgs, Cli, CliError, Command, Format, IngestArgs, LearnArgs, QueryArgs, ServeArgs, StrategyArg, SynthArgs};

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Params(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Query(q) => q.into(),
            ExecError::StopRule(_) => CliError::Usage(e.to_string()),
            _ => CliError::Engine(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Query { .. } | BenchError::Workload(_) | BenchError::Params(_) => CliError::Usage(e.to_string()),
            BenchError::Exec(x) => x.into(),
            BenchError::Table(_) | BenchError::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

struct Ctx {
    format: Format,
    file: FileConfig,
}

impl Ctx {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) {
        match self.format {
            Format::Json => write_stdout(&(serde_json::to_string_pretty(value).expect("output serializes") + "\n")),
            Format::Text => write_stdout(&text()),
        }
    }

    fn data_dir(&self) -> Result<PathBuf, CliError> {
        self.file
            .data_dir()
            .ok_or_else(|| CliError::Usage("no output location: pass it explicitly or set DATA_DIR".into()))
    }
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn write_stdout(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let format = cli.format.or(file.format).unwrap_or(Format::Text);
    let ctx = Ctx { format, file };
    match cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Learn(a) => learn_cmd(&ctx, a),
        Command::Query(a) => query(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

/// Uses the given seed or draws one and reports it so the run can be repeated.
fn resolve_seed(seed: Option<u64>, what: &str) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("{what} seed: {s}");
        s
    })
}

pub fn schema_path_for(csv: &Path) -> PathBuf {
    csv.with_extension("schema.json")
}

fn read_schema(path: &Path) -> Result<Vec<FieldSpec>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(parse_schema_json(&text)?)
}

fn write_schema(table: &Table, path: &Path) -> Result<(), CliError> {
    let fields: Vec<FieldSpec> = table.schema().iter().map(field_spec_of).collect();
    std::fs::write(path, serde_json::to_string_pretty(&fields).expect("schema serializes")).map_err(|e| io_err(path, e))
}

fn load_table(csv: &Path, schema: Option<&Path>) -> Result<Table, CliError> {
    let schema = schema.map_or_else(|| schema_path_for(csv), Path::to_path_buf);
    let fields = read_schema(&schema)?;
    Ok(load_csv(csv, &fields)?)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let spn = Spn::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Model::new(spn))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct TableSummary {
    name: String,
    path: PathBuf,
    row_count: usize,
    columns: Vec<ColumnStats>,
}

fn stats_text(s: &TableSummary) -> String {
    let rows: Vec<Vec<String>> = s
        .columns
        .iter()
        .map(|c| {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| v.to_string());
            let domain = c.domain.as_ref().map_or("-".to_string(), |d| {
                if d.len() <= 8 {
                    d.join(",")
                } else {
                    format!("{} values", d.len())
                }
            });
            let kind = serde_json::to_value(c.kind).expect("kind serializes");
            vec![c.name.clone(), kind.as_str().unwrap_or("-").to_string(), domain, opt(c.min), opt(c.max)]
        })
        .collect();
    format!(
        "{}: {} rows -> {}\n{}",
        s.name,
        s.row_count,
        s.path.display(),
        output::table(&["column", "kind", "domain", "min", "max"], &rows)
    )
}

fn summarize(table: &Table, path: &Path) -> TableSummary {
    TableSummary {
        name: table.name().to_string(),
        path: path.to_path_buf(),
        row_count: table.row_count(),
        columns: table.stats(),
    }
}

fn ingest(ctx: &Ctx, a: IngestArgs) -> Result<(), CliError> {
    let fields = read_schema(&a.schema)?;
    let mut table = load_csv(&a.csv, &fields)?;
    if let Some(name) = &a.name {
        table = table.with_name(name.clone());
    }
    let name = table.name().to_string();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(CliError::Usage(format!("dataset name '{name}' must consist of [A-Za-z0-9_-]")));
    }
    let dir = match a.out {
        Some(d) => d,
        None => ctx.data_dir()?.join("datasets"),
    };
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let csv = dir.join(format!("{name}.csv"));
    table.save_csv(&csv)?;
    write_schema(&table, &schema_path_for(&csv))?;
    let s = summarize(&table, &csv);
    ctx.emit(&s, || stats_text(&s));
    Ok(())
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<(), CliError> {
    let seed = resolve_seed(a.seed, "generator");
    let table = gen_synthetic(&SyntheticParams::with_n(a.n, seed))?;
    ensure_parent(&a.out)?;
    table.save_csv(&a.out)?;
    write_schema(&table, &schema_path_for(&a.out))?;
    let s = summarize(&table, &a.out);
    ctx.emit(&s, || stats_text(&s));
    Ok(())
}

#[derive(Serialize)]
struct LearnSummary {
    path: PathBuf,
    model_id: String,
    table: String,
    row_count: u64,
    node_count: usize,
    depth: usize,
    params: Option<LearnParams>,
}

fn learn_cmd(ctx: &Ctx, a: LearnArgs) -> Result<(), CliError> {
    let table = load_table(&a.dataset, a.schema.as_deref())?;
    let seed = resolve_seed(a.seed, "learner");
    let spn = if a.independent {
        learn_independence_baseline_seeded(&table, seed)?
    } else {
        let params = LearnParams {
            rdc_threshold: a.rdc_threshold,
            min_instance_slice: a.min_instance_slice,
            seed,
            cluster_k: a.cluster_k,
        };
        params.validate()?;
        learn(&table, &params)?
    };
    let out = match a.out {
        Some(p) => p,
        None => ctx.data_dir()?.join("models").join(format!("{}.json", table.name())),
    };
    ensure_parent(&out)?;
    std::fs::write(&out, spn.to_json()).map_err(|e| io_err(&out, e))?;
    let s = LearnSummary {
        path: out,
        model_id: spn.model_id(),
        table: spn.table.clone(),
        row_count: spn.row_count,
        node_count: spn.node_count(),
        depth: spn.root.depth(),
        params: spn.learner_params.clone(),
    };
    ctx.emit(&s, || {
        format!(
            "model {} ({} nodes, depth {}) for {} ({} rows) -> {}\n",
            s.model_id,
            s.node_count,
            s.depth,
            s.table,
            s.row_count,
            s.path.display()
        )
    });
    Ok(())
}

/// `name(a, b) = expr`
fn parse_udf(def: &str) -> Result<(String, Vec<String>, String), CliError> {
    let bad = || CliError::Usage(format!("malformed --udf '{def}', expected 'name(a, b) = expression'"));
    let (head, body) = def.split_once('=').ok_or_else(bad)?;
    let (name, rest) = head.split_once('(').ok_or_else(bad)?;
    let params = rest.trim().strip_suffix(')').ok_or_else(bad)?;
    let params: Vec<String> = params
        .split(',')
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect();
    let name = name.trim();
    if name.is_empty() || body.trim().is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), params, body.trim().to_string()))
}

#[derive(Serialize)]
struct Comparison {
    exact: AggregateResult,
    relative_errors: Vec<KeyError>,
    avg_rel_error: Option<f64>,
    bin_missing: Option<f64>,
}

#[derive(Serialize)]
struct KeyError {
    key: Vec<String>,
    rel_error: f64,
}

#[derive(Serialize)]
struct QueryOutput {
    result: AggregateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

fn query(ctx: &Ctx, a: QueryArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let spec = parse(&a.sql)?;
    let mut udfs = UdfRegistry::new();
    for def in &a.udf {
        let (name, params, body) = parse_udf(def)?;
        let params: Vec<&str> = params.iter().map(String::as_str).collect();
        udfs.register(&name, &params, &body)?;
    }
    let compiled = model.compile(&spec, &udfs)?;

    let truth = if a.compare_exact {
        let csv = match &a.dataset {
            Some(p) => p.clone(),
            None => ctx.data_dir()?.join("datasets").join(format!("{}.csv", model.spn().table)),
        };
        let table = load_table(&csv, None)?;
        Some(exact_query(&table, &compiled)?)
    } else {
        None
    };

    let strategy = match a.strategy {
        StrategyArg::Auto if choose_strategy(&compiled) == StrategyClass::ProbabilityBased => StrategyArg::Probability,
        StrategyArg::Auto => match default_sampler(&compiled) {
            SamplerKind::Random => StrategyArg::Random,
            SamplerKind::Relevance => StrategyArg::Relevance,
            SamplerKind::Stratified => StrategyArg::Stratified,
        },
        s => s,
    };

    let result = if strategy == StrategyArg::Probability {
        let start = std::time::Instant::now();
        let mut r = model.probability(&compiled)?;
        r.meta.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        r
    } else {
        let kind = match strategy {
            StrategyArg::Random => SamplerKind::Random,
            StrategyArg::Stratified => SamplerKind::Stratified,
            _ => SamplerKind::Relevance,
        };
        let stop = StopRule::new(a.max_samples, a.emit_every.unwrap_or((a.max_samples / 10).max(1)));
        let seed = resolve_seed(a.seed, "sampling");
        let mut last = None;
        for step in model.sample(&compiled, kind, &stop, seed, None)? {
            let step = step?;
            if a.progress {
                eprintln!("[{} samples] {}", step.meta.samples_used, progress_line(&step));
            }
            last = Some(step);
        }
        last.ok_or_else(|| CliError::Engine("sampling produced no result".into()))?
    };

    let comparison = truth.map(|exact| {
        let rel = relative_errors(&exact, &result);
        Comparison {
            relative_errors: rel.iter().map(|(k, e)| KeyError { key: k.clone(), rel_error: *e }).collect(),
            avg_rel_error: avg_rel_error(&exact, &result).ok(),
            bin_missing: bin_missing(&exact, &result).ok(),
            exact,
        }
    });

    let out = QueryOutput { result, comparison };
    ctx.emit(&out, || {
        let names: Vec<String> = spec.group_by.clone();
        let errs = out.comparison.as_ref().map(|c| {
            c.relative_errors.iter().map(|k| (k.key.clone(), k.rel_error)).collect::<Vec<_>>()
        });
        let mut s = output::result_table(&out.result, &names, errs.as_deref());
        s += &output::meta_line(&out.result);
        s.push('\n');
        if let Some(c) = &out.comparison {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
            s += &format!("avg_rel_error: {}  bin_missing: {}\n", opt(c.avg_rel_error), opt(c.bin_missing));
        }
        s
    });
    Ok(())
}

fn progress_line(r: &AggregateResult) -> String {
    r.groups
        .iter()
        .map(|g| {
            if g.key.is_empty() {
                output::num(g.value)
            } else {
                format!("{}={}", g.key.join("|"), output::num(g.value))
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn workload_from(arg: &str) -> Result<Workload, CliError> {
    let builtin = |queries: Vec<WorkloadQuery>| Workload::new(queries);
    match arg {
        "synthetic" => Ok(builtin(synthetic_queries())),
        "flights" => Ok(builtin(flights_queries())),
        id if builtin_query(id).is_some() && !Path::new(id).exists() => {
            Ok(builtin(vec![builtin_query(id).expect("checked")]))
        }
        path => Ok(Workload::load(Path::new(path))?),
    }
}

fn bench(ctx: &Ctx, a: BenchArgs) -> Result<(), CliError> {
    let mut workload = workload_from(&a.workload)?;
    if let Some(seed) = a.seed {
        workload.seed = seed;
    }
    let table = load_table(&a.table, a.schema.as_deref())?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        models.push((name, load_model(&path)?));
    }

    let jobs = a.jobs.or(ctx.file.jobs);
    let report = match jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(|| run_workload(&table, &models, &workload))?,
        None => run_workload(&table, &models, &workload)?,
    };
    let report = if a.omit_timing { report.without_timing() } else { report };
    let timing = !a.omit_timing;

    let out = match a.out {
        Some(d) => Some(d),
        None => ctx.file.data_dir().map(|d| d.join("bench")),
    };
    if let Some(dir) = &out {
        report.write(dir, timing)?;
        eprintln!("reports written to {}", dir.display());
    }
    let summary = report.summary_csv(timing);
    ctx.emit(&report, || summary);
    Ok(())
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<(), CliError> {
    let mut config = ServiceConfig::from_env()?;
    let f = &ctx.file;
    if let Some(v) = a.bind.or_else(|| f.bind.clone()) {
        config.bind = v;
    }
    if let Some(v) = a.port.or(f.port) {
        config.port = v;
    }
    if let Some(v) = a.data_dir.or_else(|| f.data_dir()) {
        config.data_dir = Some(v);
    }
    if let Some(v) = a.max_upload_bytes.or(f.max_upload_bytes) {
        config.max_upload_bytes = v;
    }
    eprintln!("listening on {}:{}", config.bind, config.port);
    Ok(mbaqp_service::serve_blocking(config)?)
}
