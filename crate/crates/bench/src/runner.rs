//! Comparative workload runs against exact ground truth, with per-emission
//! error trajectories and averaged summaries.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mbaqp_core::{
    avg_rel_error, bin_missing, compile, exact_query, online_sample_query_batched, parse, AggregateResult,
    CompiledQuery, ExecError, Model, SamplerKind, StopRule, Table, UdfRegistry,
};

use crate::workload::{Engine, Workload, WorkloadQuery};
use crate::BenchError;

/// One point of an error-vs-samples trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub samples: u64,
    pub avg_rel_error: Option<f64>,
    pub bin_missing: Option<f64>,
}

/// One (query, model, engine, repetition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub query: String,
    pub model: String,
    pub engine: Engine,
    pub repetition: usize,
    pub seed: u64,
    /// Executor that actually ran (after any sampler fallback).
    pub strategy: Option<String>,
    pub bin_missing: Option<f64>,
    pub avg_rel_error: Option<f64>,
    pub samples_used: u64,
    pub elapsed_ms: f64,
    pub error: Option<String>,
    pub trajectory: Vec<TrajectoryPoint>,
}

/// Averages over the successful repetitions of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub query: String,
    pub model: String,
    pub engine: Engine,
    pub runs: usize,
    pub failures: usize,
    pub bin_missing: Option<f64>,
    pub avg_rel_error: Option<f64>,
    pub samples_used: Option<f64>,
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub runs: Vec<CellRun>,
    pub summary: Vec<SummaryRow>,
}

/// Seed of repetition `rep` of cell `cell` of query `query`.
pub fn derive_seed(base: u64, query: usize, cell: usize, rep: usize) -> u64 {
    let mut z = base
        .wrapping_add((query as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((cell as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add((rep as u64).wrapping_mul(0x1656_67B1_9E37_79F9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn point(truth: &AggregateResult, r: &AggregateResult) -> TrajectoryPoint {
    TrajectoryPoint {
        samples: r.meta.samples_used,
        avg_rel_error: avg_rel_error(truth, r).ok(),
        bin_missing: bin_missing(truth, r).ok(),
    }
}

fn satisfied(stop: &StopRule, p: &TrajectoryPoint) -> bool {
    match (stop.target_avg_rel_error, p.avg_rel_error, p.bin_missing) {
        (Some(t), Some(e), Some(m)) => m == 0.0 && e <= t,
        _ => false,
    }
}

struct Job<'a> {
    qi: usize,
    query: &'a WorkloadQuery,
    model: Option<&'a (String, Model)>,
    engine: Engine,
    rep: usize,
    seed: u64,
}

struct Prepared {
    truth: AggregateResult,
    on_table: CompiledQuery,
    /// Compiled against each model's schema, in model order.
    on_models: Vec<Result<CompiledQuery, String>>,
}

fn run_cell(table: &Table, job: &Job, prep: &Prepared, stop: &StopRule, model_idx: usize) -> CellRun {
    let mut cell = CellRun {
        query: job.query.id.clone(),
        model: job.model.map_or_else(|| "table".to_string(), |(n, _)| n.clone()),
        engine: job.engine,
        repetition: job.rep,
        seed: job.seed,
        strategy: None,
        bin_missing: None,
        avg_rel_error: None,
        samples_used: 0,
        elapsed_ms: 0.0,
        error: None,
        trajectory: Vec::new(),
    };
    let outcome: Result<Option<AggregateResult>, String> = (|| {
        let mut last = None;
        match (job.engine, job.model) {
            (Engine::Online, _) => {
                let run = online_sample_query_batched(table, &prep.on_table, stop.max_samples, stop.emit_every, job.seed)
                    .map_err(|e| e.to_string())?;
                for r in run {
                    let r = r.map_err(|e| e.to_string())?;
                    let p = point(&prep.truth, &r);
                    let done = satisfied(stop, &p);
                    cell.trajectory.push(p);
                    last = Some(r);
                    if done {
                        break;
                    }
                }
            }
            (_, None) => return Err("engine needs a model".into()),
            (engine, Some((_, model))) => {
                let q = prep.on_models[model_idx].as_ref().map_err(Clone::clone)?;
                if engine == Engine::Probability {
                    let r = model.probability(q).map_err(|e: ExecError| e.to_string())?;
                    cell.trajectory.push(point(&prep.truth, &r));
                    last = Some(r);
                } else {
                    let kind = match engine {
                        Engine::Random => SamplerKind::Random,
                        Engine::Relevance => SamplerKind::Relevance,
                        _ => SamplerKind::Stratified,
                    };
                    let run = model
                        .sample(q, kind, stop, job.seed, Some(prep.truth.clone()))
                        .map_err(|e| e.to_string())?;
                    for r in run {
                        let r = r.map_err(|e| e.to_string())?;
                        cell.trajectory.push(point(&prep.truth, &r));
                        last = Some(r);
                    }
                }
            }
        }
        Ok(last)
    })();
    match outcome {
        Ok(Some(r)) => {
            cell.strategy = Some(r.meta.strategy.name().to_string());
            cell.bin_missing = bin_missing(&prep.truth, &r).ok();
            cell.avg_rel_error = avg_rel_error(&prep.truth, &r).ok();
            cell.samples_used = r.meta.samples_used;
            cell.elapsed_ms = r.meta.elapsed_ms;
        }
        Ok(None) => cell.error = Some("engine produced no result".into()),
        Err(e) => cell.error = Some(e),
    }
    cell
}

/// Runs every (query, engine, model, repetition) cell of a workload. Model
/// engines run once per model; the online engine runs on the table. Engine
/// failures are recorded per cell and do not stop the run.
pub fn run_workload(table: &Table, models: &[(String, Model)], workload: &Workload) -> Result<MetricsReport, BenchError> {
    workload.validate()?;
    if models.is_empty() && workload.engines.iter().any(|e| e.uses_model()) {
        return Err(BenchError::Workload("model engines requested but no models given".into()));
    }
    let udfs = UdfRegistry::new();
    let prepared: Vec<Prepared> = workload
        .queries
        .iter()
        .map(|wq| {
            let spec = parse(&wq.sql).map_err(|e| BenchError::Query {
                id: wq.id.clone(),
                source: e,
            })?;
            let on_table = compile(&spec, table.schema(), &udfs).map_err(|e| BenchError::Query {
                id: wq.id.clone(),
                source: e,
            })?;
            let truth = exact_query(table, &on_table)?;
            let on_models = models
                .iter()
                .map(|(_, m)| m.compile(&spec, &udfs).map_err(|e| e.to_string()))
                .collect();
            Ok(Prepared {
                truth,
                on_table,
                on_models,
            })
        })
        .collect::<Result<_, BenchError>>()?;

    let mut jobs = Vec::new();
    for (qi, query) in workload.queries.iter().enumerate() {
        let mut cell = 0;
        for &engine in &workload.engines {
            let targets: Vec<(usize, Option<&(String, Model)>)> = if engine.uses_model() {
                models.iter().enumerate().map(|(i, m)| (i, Some(m))).collect()
            } else {
                vec![(0, None)]
            };
            for (mi, model) in targets {
                for rep in 0..workload.repetitions {
                    jobs.push((
                        mi,
                        Job {
                            qi,
                            query,
                            model,
                            engine,
                            rep,
                            seed: derive_seed(workload.seed, qi, cell, rep),
                        },
                    ));
                }
                cell += 1;
            }
        }
    }
    let runs: Vec<CellRun> = jobs
        .par_iter()
        .map(|(mi, job)| run_cell(table, job, &prepared[job.qi], &workload.stop, *mi))
        .collect();
    let summary = summarize(&runs);
    Ok(MetricsReport { runs, summary })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(runs: &[CellRun]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < runs.len() {
        let head = &runs[i];
        let mut j = i;
        while j < runs.len()
            && runs[j].query == head.query
            && runs[j].model == head.model
            && runs[j].engine == head.engine
        {
            j += 1;
        }
        let group = &runs[i..j];
        let ok: Vec<&CellRun> = group.iter().filter(|r| r.error.is_none()).collect();
        out.push(SummaryRow {
            query: head.query.clone(),
            model: head.model.clone(),
            engine: head.engine,
            runs: group.len(),
            failures: group.len() - ok.len(),
            bin_missing: mean(ok.iter().filter_map(|r| r.bin_missing)),
            avg_rel_error: mean(ok.iter().filter_map(|r| r.avg_rel_error)),
            samples_used: mean(ok.iter().map(|r| r.samples_used as f64)),
            elapsed_ms: mean(ok.iter().map(|r| r.elapsed_ms)),
        });
        i = j;
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

impl MetricsReport {
    /// Zeroes every wall-clock field so reports are byte-stable.
    pub fn without_timing(mut self) -> Self {
        for r in &mut self.runs {
            r.elapsed_ms = 0.0;
        }
        for s in &mut self.summary {
            s.elapsed_ms = None;
        }
        self
    }

    pub fn runs_csv(&self, timing: bool) -> String {
        let mut out = String::from("query,model,engine,repetition,seed,strategy,bin_missing,avg_rel_error,samples_used");
        out.push_str(if timing { ",elapsed_ms,error\n" } else { ",error\n" });
        for r in &self.runs {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.query,
                r.model,
                r.engine.name(),
                r.repetition,
                r.seed,
                r.strategy.as_deref().unwrap_or(""),
                opt(r.bin_missing),
                opt(r.avg_rel_error),
                r.samples_used
            );
            if timing {
                let _ = write!(out, ",{}", r.elapsed_ms);
            }
            let _ = writeln!(out, ",{}", csv_field(r.error.as_deref().unwrap_or("")));
        }
        out
    }

    pub fn summary_csv(&self, timing: bool) -> String {
        let mut out = String::from("query,model,engine,runs,failures,bin_missing,avg_rel_error,samples_used");
        out.push_str(if timing { ",elapsed_ms\n" } else { "\n" });
        for s in &self.summary {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.query,
                s.model,
                s.engine.name(),
                s.runs,
                s.failures,
                opt(s.bin_missing),
                opt(s.avg_rel_error),
                opt(s.samples_used)
            );
            if timing {
                let _ = write!(out, ",{}", opt(s.elapsed_ms));
            }
            out.push('\n');
        }
        out
    }

    /// Trajectory files keyed by `query__model__engine`.
    pub fn trajectory_csvs(&self) -> Vec<(String, String)> {
        let mut files: Vec<(String, String)> = Vec::new();
        for r in &self.runs {
            let name = format!(
                "{}__{}__{}.csv",
                file_stem(&r.query),
                file_stem(&r.model),
                r.engine.name()
            );
            if files.last().is_none_or(|(n, _)| *n != name) {
                files.push((name, "repetition,samples,avg_rel_error,bin_missing\n".to_string()));
            }
            let body = &mut files.last_mut().expect("pushed").1;
            for p in &r.trajectory {
                let _ = writeln!(
                    body,
                    "{},{},{},{}",
                    r.repetition,
                    p.samples,
                    opt(p.avg_rel_error),
                    opt(p.bin_missing)
                );
            }
        }
        files
    }

    /// Writes `runs.csv`, `summary.csv`, `report.json` and
    /// `trajectories/*.csv` under `dir`.
    pub fn write(&self, dir: &Path, timing: bool) -> Result<(), BenchError> {
        let report = if timing { self.clone() } else { self.clone().without_timing() };
        let traj_dir = dir.join("trajectories");
        std::fs::create_dir_all(&traj_dir).map_err(|e| BenchError::io(&traj_dir, e))?;
        let write = |path: &Path, text: &str| std::fs::write(path, text).map_err(|e| BenchError::io(path, e));
        write(&dir.join("runs.csv"), &report.runs_csv(timing))?;
        write(&dir.join("summary.csv"), &report.summary_csv(timing))?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write(&dir.join("report.json"), &json)?;
        for (name, body) in report.trajectory_csvs() {
            write(&traj_dir.join(name), &body)?;
        }
        Ok(())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
