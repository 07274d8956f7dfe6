//! Query workloads: the built-in synthetic and flights query sets and the
//! JSON workload file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mbaqp_core::StopRule;

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadQuery {
    pub id: String,
    pub sql: String,
}

impl WorkloadQuery {
    pub fn new(id: impl Into<String>, sql: impl Into<String>) -> Self {
        WorkloadQuery {
            id: id.into(),
            sql: sql.into(),
        }
    }
}

/// Executors a workload can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Closed-form answers from model probabilities.
    Probability,
    /// Rows generated from the unconditioned model, filter applied afterwards.
    Random,
    /// Rows generated from the model conditioned on the filter.
    Relevance,
    /// Per-group conditioned generation with a capped even allocation.
    Stratified,
    /// Uniform sampling of the stored table (classical online aggregation).
    Online,
}

impl Engine {
    pub const ALL: [Engine; 5] = [
        Engine::Probability,
        Engine::Random,
        Engine::Relevance,
        Engine::Stratified,
        Engine::Online,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Probability => "probability",
            Engine::Random => "random",
            Engine::Relevance => "relevance",
            Engine::Stratified => "stratified",
            Engine::Online => "online",
        }
    }

    /// Whether the engine runs on a model (as opposed to the table).
    pub fn uses_model(self) -> bool {
        self != Engine::Online
    }
}

fn default_stop() -> StopRule {
    StopRule {
        max_samples: 100_000,
        emit_every: 1_000,
        target_avg_rel_error: Some(0.05),
    }
}

fn default_repetitions() -> usize {
    10
}

fn default_engines() -> Vec<Engine> {
    Engine::ALL.to_vec()
}

/// `{queries: [{id, sql}], engines, stop, repetitions, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub queries: Vec<WorkloadQuery>,
    #[serde(default = "default_engines")]
    pub engines: Vec<Engine>,
    #[serde(default = "default_stop")]
    pub stop: StopRule,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Workload {
    pub fn new(queries: Vec<WorkloadQuery>) -> Self {
        Workload {
            queries,
            engines: default_engines(),
            stop: default_stop(),
            repetitions: default_repetitions(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.queries.is_empty() {
            return Err(BenchError::Workload("workload has no queries".into()));
        }
        if self.engines.is_empty() {
            return Err(BenchError::Workload("workload has no engines".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Workload("repetitions must be at least 1".into()));
        }
        let mut ids: Vec<&str> = self.queries.iter().map(|q| q.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(BenchError::Workload(format!("duplicate query id '{}'", w[0])));
        }
        self.stop.validate()?;
        if self.stop.emit_every > self.stop.max_samples {
            return Err(BenchError::Workload("stop.emit_every must not exceed stop.max_samples".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Workload, BenchError> {
        let w: Workload = serde_json::from_str(text).map_err(|e| BenchError::Workload(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Workload, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Workload::from_json(&text)
    }
}

/// Grouped and point queries over the synthetic table, by decreasing
/// selectivity within each family.
pub fn synthetic_queries() -> Vec<WorkloadQuery> {
    let mut out = Vec::new();
    for f in 1..=4 {
        out.push(WorkloadQuery::new(
            format!("S1.{f}"),
            format!("SELECT A, COUNT(*) FROM syn WHERE filter='{f}' GROUP BY A"),
        ));
    }
    for f in 1..=4 {
        out.push(WorkloadQuery::new(
            format!("S2.{f}"),
            format!("SELECT A, AVG(B) FROM syn WHERE filter='{f}' GROUP BY A"),
        ));
    }
    for f in 1..=4 {
        out.push(WorkloadQuery::new(
            format!("S3.{f}"),
            format!("SELECT COUNT(*) FROM syn WHERE filter='{f}' AND A='4'"),
        ));
    }
    for f in 1..=4 {
        out.push(WorkloadQuery::new(
            format!("S4.{f}"),
            format!("SELECT AVG(B) FROM syn WHERE filter='{f}' AND A='4'"),
        ));
    }
    out
}

/// The flights query set (the dataset itself is not bundled).
pub fn flights_queries() -> Vec<WorkloadQuery> {
    [
        ("F1.1", "SELECT AVG(dep_delay) FROM flights WHERE origin='ATL'"),
        ("F1.2", "SELECT AVG(distance) FROM flights WHERE unique_carrier='TW'"),
        (
            "F2.1",
            "SELECT unique_carrier, COUNT(*) FROM flights WHERE origin_state_abr='LA' GROUP BY unique_carrier",
        ),
        (
            "F2.2",
            "SELECT unique_carrier, COUNT(*) FROM flights WHERE origin_state_abr='LA' AND dest_state_abr='CA' GROUP BY unique_carrier",
        ),
        (
            "F2.3",
            "SELECT year_date, COUNT(*) FROM flights WHERE origin_state_abr='LA' AND dest='JFK' GROUP BY year_date",
        ),
        (
            "F3.1",
            "SELECT year_date, SUM(distance) FROM flights WHERE unique_carrier='9E' GROUP BY year_date",
        ),
        (
            "F3.2",
            "SELECT origin_state_abr, SUM(air_time) FROM flights WHERE dest='HPN' GROUP BY origin_state_abr",
        ),
        (
            "F3.3",
            "SELECT unique_carrier, AVG(dep_delay) FROM flights WHERE year_date='2005' AND origin='PHX' GROUP BY unique_carrier",
        ),
        (
            "F4.1",
            "SELECT dest_state_abr, COUNT(*) FROM flights WHERE distance>2500 GROUP BY dest_state_abr",
        ),
        (
            "F4.2",
            "SELECT unique_carrier, COUNT(*) FROM flights WHERE air_time>1000 AND dep_delay>1500 GROUP BY unique_carrier",
        ),
    ]
    .into_iter()
    .map(|(id, sql)| WorkloadQuery::new(id, sql))
    .collect()
}

/// Looks up a query of either built-in set by id (`"S3.1"`, `"F2.2"`, …).
pub fn builtin_query(id: &str) -> Option<WorkloadQuery> {
    synthetic_queries()
        .into_iter()
        .chain(flights_queries())
        .find(|q| q.id.eq_ignore_ascii_case(id))
}
