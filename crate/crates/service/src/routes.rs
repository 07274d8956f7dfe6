use std::convert::Infallible;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::mpsc;

use mbaqp_core::metrics::relative_errors;
use mbaqp_core::query::{choose_strategy, StrategyClass};
use mbaqp_core::schema::FieldSpec;
use mbaqp_core::table::read_csv;
use mbaqp_core::{
    avg_rel_error, bin_missing, compile, default_sampler, exact_query, learn, parse, AggregateResult, CompiledQuery,
    LearnParams, Model, SamplerKind, StopRule, Table, UdfRegistry,
};

use crate::error::ApiError;
use crate::registry::{validate_name, ModelStatus};
use crate::AppState;

type Payload<T> = Result<Json<T>, JsonRejection>;

pub async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
pub struct DatasetUpload {
    pub name: String,
    pub schema: Vec<FieldSpec>,
    pub csv: String,
}

pub async fn create_dataset(State(state): State<AppState>, payload: Payload<DatasetUpload>) -> Result<Response, ApiError> {
    let Json(up) = payload?;
    validate_name(&up.name)?;
    if state.registry.dataset(&up.name).is_some() {
        return Err(ApiError::Conflict(format!("dataset '{}' already exists", up.name)));
    }
    let table = tokio::task::spawn_blocking(move || read_csv(up.csv.as_bytes(), &up.name, &up.schema))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let registry = state.registry.clone();
    let ds = tokio::task::spawn_blocking(move || registry.add_dataset(table))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    log::info!("dataset '{}' loaded with {} rows", ds.id, ds.table.row_count());
    Ok((StatusCode::CREATED, Json(ds.info())).into_response())
}

pub async fn list_datasets(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"datasets": state.registry.datasets()}))
}

#[derive(Deserialize)]
pub struct ModelRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub params: LearnParams,
}

pub async fn create_model(State(state): State<AppState>, payload: Payload<ModelRequest>) -> Result<Response, ApiError> {
    let Json(req) = payload?;
    req.params.validate()?;
    let ds = state
        .registry
        .dataset(&req.dataset_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown dataset '{}'", req.dataset_id)))?;
    let (entry, fresh) = state.registry.begin_model(&ds.id, &req.params);
    if !fresh {
        return Ok((StatusCode::OK, Json(entry.info())).into_response());
    }
    let registry = state.registry.clone();
    let id = entry.id.clone();
    let params = req.params;
    tokio::task::spawn_blocking(move || {
        let _one_job_per_dataset = ds.learn_lock.lock();
        let start = Instant::now();
        let outcome = learn(&ds.table, &params).map_err(|e| e.to_string());
        match &outcome {
            Ok(spn) => log::info!(
                "model {id} on '{}' ready: {} nodes in {:.2}s",
                ds.id,
                spn.node_count(),
                start.elapsed().as_secs_f64()
            ),
            Err(e) => log::warn!("model {id} on '{}' failed: {e}", ds.id),
        }
        registry.finish_model(&id, outcome);
    });
    Ok((StatusCode::ACCEPTED, Json(entry.info())).into_response())
}

pub async fn list_models(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"models": state.registry.models()}))
}

pub async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = state
        .registry
        .model(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown model '{id}'")))?;
    Ok(Json(entry.info()).into_response())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyChoice {
    #[default]
    Auto,
    Probability,
    Random,
    Relevance,
    Stratified,
}

#[derive(Deserialize)]
pub struct QueryRequest {
    pub model_id: String,
    pub sql: String,
    #[serde(default)]
    pub strategy: StrategyChoice,
    pub max_samples: Option<usize>,
    pub emit_every: Option<usize>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub compare_exact: bool,
    /// Stream progressive results as NDJSON (also chosen by
    /// `Accept: application/x-ndjson`).
    #[serde(default)]
    pub stream: bool,
}

#[derive(Serialize)]
struct GroupError {
    key: Vec<String>,
    rel_error: f64,
}

#[derive(Serialize)]
struct Comparison {
    exact: AggregateResult,
    relative_errors: Vec<GroupError>,
    #[serde(skip_serializing_if = "Option::is_none")]
    avg_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bin_missing: Option<f64>,
}

fn compare(exact: &AggregateResult, approx: &AggregateResult) -> Comparison {
    Comparison {
        exact: exact.clone(),
        relative_errors: relative_errors(exact, approx)
            .into_iter()
            .map(|(key, rel_error)| GroupError { key, rel_error })
            .collect(),
        avg_rel_error: avg_rel_error(exact, approx).ok(),
        bin_missing: bin_missing(exact, approx).ok(),
    }
}

#[derive(Serialize)]
struct QueryResponse {
    model_id: String,
    strategy: StrategyChoice,
    result: AggregateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

#[derive(Serialize)]
struct StreamEvent<'a> {
    samples_used: u64,
    groups: &'a [mbaqp_core::GroupValue],
    meta: &'a mbaqp_core::ResultMeta,
    #[serde(rename = "final")]
    is_final: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<Comparison>,
}

const DEFAULT_MAX_SAMPLES: usize = 10_000;

fn stop_rule(req: &QueryRequest) -> StopRule {
    let max = req.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES);
    StopRule::new(max, req.emit_every.unwrap_or((max / 10).max(1)))
}

fn exact_for(state: &AppState, dataset_id: &str, sql: &str) -> Result<AggregateResult, ApiError> {
    let ds = state
        .registry
        .dataset(dataset_id)
        .ok_or_else(|| ApiError::NotFound(format!("source dataset '{dataset_id}' is not loaded")))?;
    let table: &Table = &ds.table;
    let q = compile(&parse(sql)?, table.schema(), &UdfRegistry::new())?;
    Ok(exact_query(table, &q)?)
}

fn ndjson(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/x-ndjson"))
}

pub async fn query(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Payload<QueryRequest>,
) -> Result<Response, ApiError> {
    let Json(req) = payload?;
    let entry = state
        .registry
        .model(&req.model_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown model '{}'", req.model_id)))?;
    let model: Arc<Model> = match (entry.status, &entry.model) {
        (ModelStatus::Ready, Some(m)) => m.clone(),
        (ModelStatus::Failed, _) => {
            return Err(ApiError::Conflict(format!(
                "model '{}' failed to build: {}",
                entry.id,
                entry.error.unwrap_or_default()
            )))
        }
        _ => return Err(ApiError::Conflict(format!("model '{}' is still building", entry.id))),
    };
    let spec = parse(&req.sql)?;
    let compiled: CompiledQuery = model.compile(&spec, &UdfRegistry::new())?;
    let strategy = match req.strategy {
        StrategyChoice::Auto if choose_strategy(&compiled) == StrategyClass::ProbabilityBased => {
            StrategyChoice::Probability
        }
        StrategyChoice::Auto => match default_sampler(&compiled) {
            SamplerKind::Random => StrategyChoice::Random,
            SamplerKind::Relevance => StrategyChoice::Relevance,
            SamplerKind::Stratified => StrategyChoice::Stratified,
        },
        s => s,
    };
    let exact = if req.compare_exact {
        let (st, ds, sql) = (state.clone(), entry.dataset_id.clone(), req.sql.clone());
        Some(
            tokio::task::spawn_blocking(move || exact_for(&st, &ds, &sql))
                .await
                .map_err(|e| ApiError::Internal(e.to_string()))??,
        )
    } else {
        None
    };

    if strategy == StrategyChoice::Probability {
        let start = Instant::now();
        let m = model.clone();
        let mut result = tokio::task::spawn_blocking(move || m.probability(&compiled))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))??;
        // the body is a pure function of model and query; timing goes to a header
        result.meta.elapsed_ms = 0.0;
        let elapsed = format!("{:.3}", start.elapsed().as_secs_f64() * 1e3);
        let body = QueryResponse {
            model_id: entry.id,
            strategy,
            comparison: exact.as_ref().map(|e| compare(e, &result)),
            result,
        };
        let mut resp = Json(body).into_response();
        resp.headers_mut()
            .insert("x-elapsed-ms", HeaderValue::from_str(&elapsed).expect("ascii"));
        return Ok(resp);
    }

    let kind = match strategy {
        StrategyChoice::Random => SamplerKind::Random,
        StrategyChoice::Stratified => SamplerKind::Stratified,
        _ => SamplerKind::Relevance,
    };
    let stop = stop_rule(&req);
    let seed = req.seed.unwrap_or_else(rand::random);
    let run = model.sample(&compiled, kind, &stop, seed, None)?;

    if req.stream || ndjson(&headers) {
        let (tx, rx) = mpsc::channel::<Bytes>(16);
        tokio::task::spawn_blocking(move || {
            let mut run = run.peekable();
            while let Some(item) = run.next() {
                let is_final = run.peek().is_none();
                let line = match item {
                    Ok(r) => serde_json::to_vec(&StreamEvent {
                        samples_used: r.meta.samples_used,
                        groups: &r.groups,
                        meta: &r.meta,
                        is_final,
                        comparison: if is_final { exact.as_ref().map(|e| compare(e, &r)) } else { None },
                    }),
                    Err(e) => serde_json::to_vec(&json!({"error": e.to_string(), "final": true})),
                }
                .expect("event serializes");
                let mut line = line;
                line.push(b'\n');
                if tx.blocking_send(Bytes::from(line)).is_err() {
                    // client went away
                    return;
                }
            }
        });
        let stream = futures::stream::unfold(rx, |mut rx| async move {
            rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx))
        });
        return Ok((
            [(header::CONTENT_TYPE, "application/x-ndjson")],
            Body::from_stream(stream),
        )
            .into_response());
    }

    let result = tokio::task::spawn_blocking(move || run.last())
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .ok_or_else(|| ApiError::Internal("sample execution produced no result".into()))??;
    Ok(Json(QueryResponse {
        model_id: entry.id,
        strategy,
        comparison: exact.as_ref().map(|e| compare(e, &result)),
        result,
    })
    .into_response())
}
