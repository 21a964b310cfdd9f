//! HTTP service over one checkpoint, corpus and editable ruleset.
//!
//! Readers take a cheap clone of the current [`Snapshot`]; mutations are
//! serialized by a writer lock, build the next snapshot off to the side
//! (re-encoding only the exemplars of the edited rule), persist the ruleset
//! file atomically and only then publish the snapshot under a new revision.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use anyhow::Result;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use rbe_core::corpus::Corpus;
use rbe_core::encoder::TrainedModel;
use rbe_core::exemplars::{check_assignment, ExemplarError, ExemplarMap};
use rbe_core::grounding::{
    ExemplarIndex, Fallback, GroundingError, InferenceConfig, Predictor, DEFAULT_K,
};
use rbe_core::jsonl::write_atomic;
use rbe_core::rulefile::{records, to_jsonl, RuleRecord};
use rbe_core::rules::{Provenance, Rule, RuleError, Ruleset, TextView};
use rbe_core::weak::{load_embedding_cache, EmbeddingCache, Strategy, WeakError};

use crate::commands::{existing, weak_labels, Loaded, WeakQuery, WeakSummary};

/// One published version of the editable state.
#[derive(Debug)]
pub struct Snapshot {
    pub revision: u64,
    pub ruleset: Ruleset,
    pub emap: ExemplarMap,
    pub index: ExemplarIndex,
}

struct Inner {
    corpus: Corpus,
    model: TrainedModel,
    cache: Option<EmbeddingCache>,
    infer: InferenceConfig,
    tau: f64,
    rules_path: Option<PathBuf>,
    snapshot: RwLock<Arc<Snapshot>>,
    writer: tokio::sync::Mutex<()>,
    predictions: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

pub struct StateParts {
    pub corpus: Corpus,
    pub ruleset: Ruleset,
    pub emap: ExemplarMap,
    pub model: TrainedModel,
    pub cache: Option<EmbeddingCache>,
    pub tau: f64,
    /// Where every accepted mutation is persisted; `None` keeps state in memory.
    pub rules_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(parts: StateParts) -> Result<Self> {
        let mut infer = InferenceConfig {
            fallback: Fallback::Nearest,
            ..Default::default()
        };
        infer.input.tokenizer = parts.model.encoders().tokenizer();
        parts.emap.validate(&parts.ruleset, &parts.corpus)?;
        let index = ExemplarIndex::build(&parts.model, &parts.emap, &parts.corpus, &infer.input)?;
        Ok(Self(Arc::new(Inner {
            corpus: parts.corpus,
            model: parts.model,
            cache: parts.cache,
            infer,
            tau: parts.tau,
            rules_path: parts.rules_path,
            snapshot: RwLock::new(Arc::new(Snapshot {
                revision: 0,
                ruleset: parts.ruleset,
                emap: parts.emap,
                index,
            })),
            writer: tokio::sync::Mutex::new(()),
            predictions: AtomicU64::new(0),
        })))
    }

    /// Loads `corpus.jsonl`, `rules.jsonl`, `model.bin` and, if present,
    /// `cache.jsonl` from `dir`.
    pub fn open(dir: &Path, tau: Option<f64>) -> Result<Self> {
        existing(dir)?;
        let rules_path = dir.join("rules.jsonl");
        let loaded = Loaded::open(
            &dir.join("corpus.jsonl"),
            &rules_path,
            &dir.join("model.bin"),
            Fallback::Nearest,
        )?;
        let tau = loaded.resolve_tau(tau)?;
        let cache_path = dir.join("cache.jsonl");
        let cache = if cache_path.exists() {
            Some(load_embedding_cache(&cache_path)?)
        } else {
            None
        };
        Self::new(StateParts {
            corpus: loaded.corpus,
            ruleset: loaded.ruleset,
            emap: loaded.emap,
            model: loaded.model,
            cache,
            tau,
            rules_path: Some(rules_path),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.0
            .snapshot
            .read()
            .expect("snapshot lock poisoned")
            .clone()
    }

    fn publish(&self, next: Snapshot) -> Result<u64, ApiError> {
        if let Some(path) = &self.0.rules_path {
            write_atomic(path, to_jsonl(&next.ruleset, &next.emap).as_bytes()).map_err(|e| {
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    format!("persisting ruleset: {e}"),
                )
            })?;
        }
        let revision = next.revision;
        *self.0.snapshot.write().expect("snapshot lock poisoned") = Arc::new(next);
        Ok(revision)
    }

    fn reindex(
        &self,
        snap: &Snapshot,
        ruleset: Ruleset,
        emap: ExemplarMap,
        changed: &str,
    ) -> Result<Snapshot, ApiError> {
        let inner = &self.0;
        let index = snap.index.rebuild_rules(
            &inner.model,
            &emap,
            &inner.corpus,
            &inner.infer.input,
            &[changed],
        )?;
        Ok(Snapshot {
            revision: snap.revision + 1,
            ruleset,
            emap,
            index,
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/rules", get(list_rules).post(create_rule))
        .route("/rules/{id}", delete(delete_rule))
        .route("/rules/{id}/exemplars", post(add_exemplars))
        .route("/predict", post(predict))
        .route("/weaklabel/preview", post(weak_preview))
        .route("/metrics", get(service_metrics))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    offset: Option<usize>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            offset: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(o) = self.offset {
            body["offset"] = o.into();
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<RuleError> for ApiError {
    fn from(e: RuleError) -> Self {
        let status = match e {
            RuleError::DuplicateId(_) => StatusCode::CONFLICT,
            RuleError::UnknownId(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            offset: e.offset(),
            message: e.to_string(),
        }
    }
}

impl From<ExemplarError> for ApiError {
    fn from(e: ExemplarError) -> Self {
        let status = match e {
            ExemplarError::Conflict { .. } => StatusCode::CONFLICT,
            ExemplarError::UnknownRule(_) => StatusCode::NOT_FOUND,
            ExemplarError::Empty => StatusCode::SERVICE_UNAVAILABLE,
            ExemplarError::UnknownDoc(_)
            | ExemplarError::NotFiring { .. }
            | ExemplarError::NegativeExemplar(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<GroundingError> for ApiError {
    fn from(e: GroundingError) -> Self {
        match e {
            GroundingError::Exemplar(e) => e.into(),
            GroundingError::EmptyText | GroundingError::BadThreshold(_) => {
                Self::new(StatusCode::BAD_REQUEST, e.to_string())
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        if let Some(w) = e.downcast_ref::<WeakError>() {
            let status = match w {
                WeakError::BadThreshold(_) => StatusCode::BAD_REQUEST,
                WeakError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::UNPROCESSABLE_ENTITY,
            };
            return Self::new(status, w.to_string());
        }
        if e.downcast_ref::<crate::exit::Invalid>().is_some() {
            return Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
        }
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RulesResponse {
    pub revision: u64,
    pub rules: Vec<RuleRecord>,
}

async fn list_rules(State(state): State<AppState>) -> Json<RulesResponse> {
    let snap = state.snapshot();
    Json(RulesResponse {
        revision: snap.revision,
        rules: records(&snap.ruleset, &snap.emap),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NewRule {
    pub id: String,
    pub expr: String,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RuleChange {
    pub revision: u64,
    pub rule: Option<RuleRecord>,
}

fn record_of(snap_rules: &Ruleset, emap: &ExemplarMap, id: &str) -> Option<RuleRecord> {
    records(snap_rules, emap).into_iter().find(|r| r.id == id)
}

async fn create_rule(
    State(state): State<AppState>,
    Json(body): Json<NewRule>,
) -> Result<(StatusCode, Json<RuleChange>), ApiError> {
    let _guard = state.0.writer.lock().await;
    let snap = state.snapshot();
    let rule = Rule::parse(
        body.id,
        &body.expr,
        body.provenance.unwrap_or(Provenance::Manual),
    )?;
    let id = rule.id.clone();
    let mut ruleset = snap.ruleset.clone();
    ruleset.push(rule)?;
    for doc in &body.exemplar_ids {
        check_assignment(&ruleset, &state.0.corpus, &id, doc)?;
    }
    let mut emap = snap.emap.clone();
    emap.insert(&id, &body.exemplar_ids)?;
    let next = state.reindex(&snap, ruleset, emap, &id)?;
    let rule = record_of(&next.ruleset, &next.emap, &id);
    let revision = state.publish(next)?;
    Ok((StatusCode::CREATED, Json(RuleChange { revision, rule })))
}

async fn delete_rule(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<RuleChange>, ApiError> {
    let _guard = state.0.writer.lock().await;
    let snap = state.snapshot();
    let mut ruleset = snap.ruleset.clone();
    ruleset.remove(&id)?;
    let mut emap = snap.emap.clone();
    emap.remove_rule(&id);
    let next = state.reindex(&snap, ruleset, emap, &id)?;
    let revision = state.publish(next)?;
    Ok(Json(RuleChange {
        revision,
        rule: None,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExemplarRequest {
    pub exemplar_ids: Vec<String>,
}

async fn add_exemplars(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ExemplarRequest>,
) -> Result<Json<RuleChange>, ApiError> {
    let _guard = state.0.writer.lock().await;
    let snap = state.snapshot();
    if snap.ruleset.get(&id).is_none() {
        return Err(RuleError::UnknownId(id).into());
    }
    if body.exemplar_ids.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "exemplar_ids is empty",
        ));
    }
    for doc in &body.exemplar_ids {
        check_assignment(&snap.ruleset, &state.0.corpus, &id, doc)?;
    }
    let mut emap = snap.emap.clone();
    emap.insert(&id, &body.exemplar_ids)?;
    let next = state.reindex(&snap, snap.ruleset.clone(), emap, &id)?;
    let rule = record_of(&next.ruleset, &next.emap, &id);
    let revision = state.publish(next)?;
    Ok(Json(RuleChange { revision, rule }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictRequest {
    pub text: String,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub k: Option<usize>,
}

pub const REVISION_HEADER: &str = "x-ruleset-revision";

async fn predict(
    State(state): State<AppState>,
    Json(body): Json<PredictRequest>,
) -> Result<Response, ApiError> {
    if body.text.trim().is_empty() {
        return Err(GroundingError::EmptyText.into());
    }
    let snap = state.snapshot();
    let inner = &state.0;
    let predictor = Predictor::new(
        &inner.model,
        &snap.ruleset,
        &snap.emap,
        &inner.corpus,
        &snap.index,
        inner.infer,
    )?;
    let trace = predictor.ground(
        body.id.as_deref().unwrap_or("scratch"),
        &body.text,
        body.tau.unwrap_or(inner.tau),
        body.k.unwrap_or(DEFAULT_K),
    )?;
    inner.predictions.fetch_add(1, Ordering::Relaxed);
    let mut resp = Json(trace).into_response();
    resp.headers_mut()
        .insert(REVISION_HEADER, HeaderValue::from(snap.revision));
    Ok(resp)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub strategy: Strategy,
    pub k: f64,
    #[serde(default)]
    pub all_pairs: bool,
    /// Maximum number of sample flips returned.
    #[serde(default = "default_flip_limit")]
    pub limit: usize,
}

fn default_flip_limit() -> usize {
    10
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Flip {
    pub id: String,
    pub rule_label: u8,
    pub weak_label: u8,
}

#[derive(Debug, Serialize)]
struct PreviewResponse {
    revision: u64,
    #[serde(flatten)]
    summary: WeakSummary,
    flips: Vec<Flip>,
}

async fn weak_preview(
    State(state): State<AppState>,
    Json(body): Json<PreviewRequest>,
) -> Result<Response, ApiError> {
    let inner = &state.0;
    let Some(cache) = &inner.cache else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no embedding cache loaded",
        ));
    };
    let snap = state.snapshot();
    let targets: Vec<_> = inner.corpus.docs().iter().collect();
    let (set, summary) = weak_labels(
        WeakQuery {
            strategy: body.strategy,
            k: body.k,
            all_pairs: body.all_pairs,
        },
        &snap.ruleset,
        &snap.emap,
        &inner.corpus,
        cache,
        &targets,
    )?;
    let flips = inner
        .corpus
        .docs()
        .iter()
        .filter_map(|d| {
            let rule_label = u8::from(
                !snap
                    .ruleset
                    .fired_indices(&TextView::new(&d.text))
                    .is_empty(),
            );
            let weak_label = set.labels[&d.id];
            (rule_label != weak_label).then(|| Flip {
                id: d.id.clone(),
                rule_label,
                weak_label,
            })
        })
        .take(body.limit)
        .collect();
    Ok(Json(PreviewResponse {
        revision: snap.revision,
        summary,
        flips,
    })
    .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub revision: u64,
    pub rules: usize,
    pub rules_with_exemplars: usize,
    pub exemplars: usize,
    pub index_entries: usize,
    pub documents: usize,
    pub tau: f64,
    pub checkpoint_sha256: String,
    pub predictions_served: u64,
    pub embedding_cache: bool,
}

async fn service_metrics(State(state): State<AppState>) -> Json<ServiceMetrics> {
    let snap = state.snapshot();
    let inner = &state.0;
    Json(ServiceMetrics {
        revision: snap.revision,
        rules: snap.ruleset.len(),
        rules_with_exemplars: snap.emap.len(),
        exemplars: snap.emap.exemplar_count(),
        index_entries: snap.index.len(),
        documents: inner.corpus.len(),
        tau: inner.tau,
        checkpoint_sha256: inner.model.digest().to_owned(),
        predictions_served: inner.predictions.load(Ordering::Relaxed),
        embedding_cache: inner.cache.is_some(),
    })
}
