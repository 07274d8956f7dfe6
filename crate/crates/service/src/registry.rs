//! In-memory registry of datasets and models, optionally mirrored to a data
//! directory so a restarted service picks up where it left off.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mbaqp_core::schema::{field_spec_of, parse_schema_json};
use mbaqp_core::table::{load_csv, ColumnStats};
use mbaqp_core::{LearnParams, Model, Spn, Table};

use crate::error::ApiError;

pub struct Dataset {
    pub id: String,
    pub table: Table,
    /// Serializes learning jobs on this dataset.
    pub learn_lock: Mutex<()>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub row_count: usize,
    pub columns: Vec<ColumnStats>,
}

impl Dataset {
    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            dataset_id: self.id.clone(),
            row_count: self.table.row_count(),
            columns: self.table.stats(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    Building,
    Ready,
    Failed,
}

#[derive(Clone)]
pub struct ModelEntry {
    pub id: String,
    pub dataset_id: String,
    pub params: LearnParams,
    pub status: ModelStatus,
    pub model: Option<Arc<Model>>,
    pub error: Option<String>,
    pub requested_at: String,
    pub finished_at: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub dataset_id: String,
    pub status: ModelStatus,
    pub params: LearnParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Content hash of the learned network.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub requested_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

impl ModelEntry {
    pub fn info(&self) -> ModelInfo {
        ModelInfo {
            model_id: self.id.clone(),
            dataset_id: self.dataset_id.clone(),
            status: self.status,
            params: self.params.clone(),
            node_count: self.model.as_ref().map(|m| m.spn().node_count()),
            depth: self.model.as_ref().map(|m| m.spn().root.depth()),
            content_id: self.model.as_ref().map(|m| m.id().to_string()),
            error: self.error.clone(),
            requested_at: self.requested_at.clone(),
            finished_at: self.finished_at.clone(),
        }
    }
}

/// On-disk form of a ready model.
#[derive(Serialize, Deserialize)]
struct ModelRecord {
    model_id: String,
    dataset_id: String,
    params: LearnParams,
    requested_at: String,
    finished_at: Option<String>,
    spn: serde_json::Value,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Model ids are derived from the dataset and the learner parameters, so
/// repeating a request finds the existing entry.
pub fn model_key(dataset_id: &str, params: &LearnParams) -> String {
    let mut h = Sha256::new();
    h.update(dataset_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(params).expect("params serialize"));
    format!("m-{}", hex::encode(&h.finalize()[..8]))
}

pub fn validate_name(name: &str) -> Result<(), ApiError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(ApiError::BadRequest(format!(
            "dataset name '{name}' must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}

#[derive(Default)]
pub struct Registry {
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    models: RwLock<BTreeMap<String, ModelEntry>>,
    data_dir: Option<PathBuf>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Registry::default()
    }

    /// Opens (and creates) `dir`, loading previously stored datasets and models.
    pub fn open(dir: &Path) -> Result<Self, ApiError> {
        let io = |p: &Path, e: std::io::Error| ApiError::Internal(format!("{}: {e}", p.display()));
        for sub in ["datasets", "models"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| io(&p, e))?;
        }
        let reg = Registry {
            data_dir: Some(dir.to_path_buf()),
            ..Registry::default()
        };

        let ds_dir = dir.join("datasets");
        let mut names: Vec<PathBuf> = std::fs::read_dir(&ds_dir)
            .map_err(|e| io(&ds_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        names.sort();
        for csv in names {
            let schema_path = csv.with_extension("schema.json");
            let text = std::fs::read_to_string(&schema_path).map_err(|e| io(&schema_path, e))?;
            let fields = parse_schema_json(&text)?;
            let table = load_csv(&csv, &fields)?;
            let id = table.name().to_string();
            reg.datasets.write().insert(id.clone(), Arc::new(Dataset { id, table, learn_lock: Mutex::new(()) }));
        }

        let m_dir = dir.join("models");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&m_dir)
            .map_err(|e| io(&m_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for path in files {
            let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let bad = |e: String| ApiError::Internal(format!("{}: {e}", path.display()));
            let (rec, spn) = match serde_json::from_str::<ModelRecord>(&text) {
                Ok(rec) => {
                    let spn = Spn::from_json(&rec.spn.to_string()).map_err(|e| bad(e.to_string()))?;
                    (rec, spn)
                }
                // a plain model file (as written by `mbaqp learn`)
                Err(_) => {
                    let spn = Spn::from_json(&text).map_err(|e| bad(e.to_string()))?;
                    let params = spn.learner_params.clone().unwrap_or_default();
                    let rec = ModelRecord {
                        model_id: model_key(&spn.table, &params),
                        dataset_id: spn.table.clone(),
                        params,
                        requested_at: spn.built_at.clone().unwrap_or_else(now),
                        finished_at: spn.built_at.clone(),
                        spn: serde_json::Value::Null,
                    };
                    (rec, spn)
                }
            };
            reg.models.write().insert(
                rec.model_id.clone(),
                ModelEntry {
                    id: rec.model_id,
                    dataset_id: rec.dataset_id,
                    params: rec.params,
                    status: ModelStatus::Ready,
                    model: Some(Arc::new(Model::new(spn))),
                    error: None,
                    requested_at: rec.requested_at,
                    finished_at: rec.finished_at,
                },
            );
        }
        log::info!(
            "loaded {} dataset(s) and {} model(s) from {}",
            reg.datasets.read().len(),
            reg.models.read().len(),
            dir.display()
        );
        Ok(reg)
    }

    pub fn add_dataset(&self, table: Table) -> Result<Arc<Dataset>, ApiError> {
        let id = table.name().to_string();
        validate_name(&id)?;
        let mut datasets = self.datasets.write();
        if datasets.contains_key(&id) {
            return Err(ApiError::Conflict(format!("dataset '{id}' already exists")));
        }
        if let Some(dir) = &self.data_dir {
            let base = dir.join("datasets");
            table.save_csv(&base.join(format!("{id}.csv")))?;
            let fields: Vec<_> = table.schema().iter().map(field_spec_of).collect();
            let schema_path = base.join(format!("{id}.schema.json"));
            std::fs::write(&schema_path, serde_json::to_string_pretty(&fields).expect("schema serializes"))
                .map_err(|e| ApiError::Internal(format!("{}: {e}", schema_path.display())))?;
        }
        let ds = Arc::new(Dataset {
            id: id.clone(),
            table,
            learn_lock: Mutex::new(()),
        });
        datasets.insert(id, ds.clone());
        Ok(ds)
    }

    pub fn dataset(&self, id: &str) -> Option<Arc<Dataset>> {
        self.datasets.read().get(id).cloned()
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.datasets.read().values().map(|d| d.info()).collect()
    }

    /// Registers a build request. Returns the entry and whether it is new;
    /// an existing entry for the same request is returned unchanged unless
    /// it failed, in which case it is reset for another attempt.
    pub fn begin_model(&self, dataset_id: &str, params: &LearnParams) -> (ModelEntry, bool) {
        let id = model_key(dataset_id, params);
        let mut models = self.models.write();
        if let Some(e) = models.get(&id) {
            if e.status != ModelStatus::Failed {
                return (e.clone(), false);
            }
        }
        let entry = ModelEntry {
            id: id.clone(),
            dataset_id: dataset_id.to_string(),
            params: params.clone(),
            status: ModelStatus::Building,
            model: None,
            error: None,
            requested_at: now(),
            finished_at: None,
        };
        models.insert(id, entry.clone());
        (entry, true)
    }

    pub fn finish_model(&self, id: &str, outcome: Result<Spn, String>) {
        let finished_at = now();
        let outcome = outcome.and_then(|spn| {
            if let Some(dir) = &self.data_dir {
                let entry = self.models.read().get(id).cloned().ok_or("entry vanished")?;
                let rec = ModelRecord {
                    model_id: id.to_string(),
                    dataset_id: entry.dataset_id,
                    params: entry.params,
                    requested_at: entry.requested_at,
                    finished_at: Some(finished_at.clone()),
                    spn: serde_json::from_str(&spn.to_json()).expect("model json is valid"),
                };
                let path = dir.join("models").join(format!("{id}.json"));
                std::fs::write(&path, serde_json::to_string(&rec).expect("record serializes"))
                    .map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(spn)
        });
        let mut models = self.models.write();
        let Some(e) = models.get_mut(id) else { return };
        e.finished_at = Some(finished_at);
        match outcome {
            Ok(spn) => {
                e.status = ModelStatus::Ready;
                e.model = Some(Arc::new(Model::new(spn)));
            }
            Err(msg) => {
                e.status = ModelStatus::Failed;
                e.error = Some(msg);
            }
        }
    }

    pub fn model(&self, id: &str) -> Option<ModelEntry> {
        self.models.read().get(id).cloned()
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        self.models.read().values().map(ModelEntry::info).collect()
    }
}
