//! In-memory HTTP JSON service over models and sessions.
//!
//! Models and sessions live only as long as the process. Requests to one
//! session are serialized by its mutex; distinct sessions run in parallel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use oobn::dsl::parse_model;
use oobn::flatten::build_flat_bn;
use oobn::model::{compile, instantiate, Model};
use oobn::msbn::{ClassCache, HtOptions, Hypertree};
use oobn::session::{self, EngineKind, RefinementOp, Session, SessionOptions, SCHEMA_VERSION};
use oobn::{Diagnostic, Error, ErrorCode};

struct ModelEntry {
    model: Model,
    cache: Arc<ClassCache>,
    structure: Value,
}

struct SessionEntry {
    model: String,
    created: u64,
    session: Mutex<Session>,
}

#[derive(Default)]
struct Store {
    models: HashMap<String, Arc<ModelEntry>>,
    sessions: HashMap<String, Arc<SessionEntry>>,
}

/// Shared server state.
#[derive(Clone, Default)]
pub struct AppState {
    store: Arc<Mutex<Store>>,
    next: Arc<AtomicU64>,
}

impl AppState {
    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next.fetch_add(1, Ordering::Relaxed) + 1)
    }

    fn model(&self, id: &str) -> Result<Arc<ModelEntry>, ApiError> {
        self.store.lock().unwrap().models.get(id).cloned().ok_or_else(|| ApiError::not_found("model", id))
    }

    fn session(&self, id: &str) -> Result<Arc<SessionEntry>, ApiError> {
        self.store.lock().unwrap().sessions.get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }
}

/// An error response: status plus `{schema_version, error, diagnostics}`.
pub struct ApiError {
    status: StatusCode,
    code: String,
    diagnostics: Vec<Diagnostic>,
}

impl ApiError {
    fn not_found(what: &str, id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            code: "E_NOT_FOUND".into(),
            diagnostics: vec![Diagnostic::new(ErrorCode::UnknownPath, format!("no {what} `{id}`"))],
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        Error::new(ErrorCode::Usage, msg).into()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = if e.code() == ErrorCode::ZeroProb { StatusCode::CONFLICT } else { StatusCode::BAD_REQUEST };
        ApiError { status, code: e.code().to_string(), diagnostics: e.diagnostics() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.code,
            "diagnostics": self.diagnostics,
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok(v: Value) -> ApiResult {
    Ok(Json(v).into_response())
}

fn created(v: Value) -> ApiResult {
    Ok((StatusCode::CREATED, Json(v)).into_response())
}

fn body_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::usage(format!("bad request body: {e}")))
}

fn query_pairs(raw: &Option<String>) -> Vec<(String, String)> {
    form_urlencoded::parse(raw.as_deref().unwrap_or("").as_bytes()).into_owned().collect()
}

fn split_eq(s: &str) -> Result<(String, String), ApiError> {
    match s.split_once('=') {
        Some((p, v)) if !p.is_empty() => Ok((p.to_string(), v.to_string())),
        _ => Err(ApiError::usage(format!("expected PATH=VALUE, got `{s}`"))),
    }
}

/// The service routes.
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/models", post(create_model))
        .route("/models/{id}/structure", get(model_structure))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(drop_session))
        .route("/sessions/{id}/evidence", get(get_evidence).post(post_evidence).delete(delete_evidence))
        .route("/sessions/{id}/query", get(query))
        .route("/sessions/{id}/refine", post(refine))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/structure", get(session_structure))
        .route("/sessions/{id}/compatible", get(compatible))
        .route("/sessions/{id}/log", get(log))
        .fallback(|| async { ApiError::not_found("route", "requested") })
        .with_state(state)
}

#[derive(Deserialize)]
struct SourceBody {
    source: String,
}

async fn create_model(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::usage("body is not UTF-8"))?;
    let source = if text.trim_start().starts_with('{') { body_json::<SourceBody>(&body)?.source } else { text.to_string() };
    let model = compile(&parse_model(&source)?)?;
    let gm = instantiate(&model)?;
    let bn = build_flat_bn(&model, &gm)?;
    let cache = ClassCache::new();
    let ht = Hypertree::build(&gm, &bn, HtOptions::default(), Some(cache.clone()))?;
    let structure = session::structure_json(&model, &gm, &bn, Some(&ht), &Default::default());
    let id = st.fresh_id("m");
    let out = json!({
        "schema_version": SCHEMA_VERSION,
        "id": id,
        "situation": model.situation.name,
        "variables": bn.len(),
        "diagnostics": [],
    });
    st.store.lock().unwrap().models.insert(id, Arc::new(ModelEntry { model, cache, structure }));
    created(out)
}

async fn model_structure(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let m = st.model(&id)?;
    let mut v = m.structure.clone();
    v["id"] = json!(id);
    ok(v)
}

#[derive(Deserialize)]
struct NewSession {
    model: String,
    #[serde(default)]
    engine: Option<String>,
    #[serde(default)]
    caching: Option<bool>,
}

fn session_json(id: &str, e: &SessionEntry, s: &Session) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "id": id,
        "model": e.model,
        "engine": s.options().engine,
        "caching": s.options().caching,
        "created": e.created,
    })
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let req: NewSession = body_json(&body)?;
    let m = st.model(&req.model)?;
    let engine: EngineKind = req.engine.as_deref().unwrap_or("msbn").parse()?;
    let opts = SessionOptions { engine, caching: req.caching.unwrap_or(true) };
    let (model, cache) = (m.model.clone(), m.cache.clone());
    let s = tokio::task::spawn_blocking(move || Session::with_cache(model, opts, cache))
        .await
        .map_err(|e| ApiError::usage(e.to_string()))??;
    let created_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let id = st.fresh_id("s");
    let entry = Arc::new(SessionEntry { model: req.model, created: created_at, session: Mutex::new(s) });
    let out = session_json(&id, &entry, &entry.session.lock().unwrap());
    st.store.lock().unwrap().sessions.insert(id, entry);
    created(out)
}

/// Runs `f` on the session off the async workers, holding its lock.
async fn with_session<T: Send + 'static>(
    st: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let e = st.session(id)?;
    tokio::task::spawn_blocking(move || {
        let mut s = e.session.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut s)
    })
    .await
    .map_err(|e| ApiError::usage(e.to_string()))?
}

async fn session_info(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let e = st.session(&id)?;
    let v = session_json(&id, &e, &e.session.lock().unwrap());
    ok(v)
}

async fn drop_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    st.session(&id)?;
    st.store.lock().unwrap().sessions.remove(&id);
    ok(json!({ "schema_version": SCHEMA_VERSION, "id": id, "deleted": true }))
}

fn evidence_json(s: &Session) -> Value {
    let ev: Vec<Value> = s.evidence().iter().map(|(p, v)| json!({ "path": p, "value": v })).collect();
    json!({ "schema_version": SCHEMA_VERSION, "evidence": ev, "stats": s.stats() })
}

async fn get_evidence(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(with_session(&st, &id, |s| Ok(evidence_json(s))).await?)
}

#[derive(Deserialize)]
struct EvidenceBody {
    path: String,
    value: String,
}

async fn post_evidence(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let req: EvidenceBody = body_json(&body)?;
    ok(with_session(&st, &id, move |s| {
        s.assert_evidence(&req.path, &req.value)?;
        Ok(evidence_json(s))
    })
    .await?)
}

#[derive(Deserialize)]
struct RetractBody {
    path: String,
}

async fn delete_evidence(State(st): State<AppState>, Path(id): Path<String>, RawQuery(q): RawQuery, body: Bytes) -> ApiResult {
    let path = match query_pairs(&q).into_iter().find(|(k, _)| k == "path") {
        Some((_, p)) => p,
        None if body.is_empty() => return Err(ApiError::usage("missing `path`")),
        None => body_json::<RetractBody>(&body)?.path,
    };
    ok(with_session(&st, &id, move |s| {
        s.retract_evidence(&path)?;
        Ok(evidence_json(s))
    })
    .await?)
}

async fn query(State(st): State<AppState>, Path(id): Path<String>, RawQuery(q): RawQuery) -> ApiResult {
    let mut targets = Vec::new();
    let mut ev = Vec::new();
    for (k, v) in query_pairs(&q) {
        match k.as_str() {
            "target" => targets.push(v),
            "evidence" => ev.push(split_eq(&v)?),
            other => return Err(ApiError::usage(format!("unknown query parameter `{other}`"))),
        }
    }
    if targets.is_empty() {
        return Err(ApiError::usage("at least one `target` is required"));
    }
    ok(with_session(&st, &id, move |s| {
        let p = s.query(&targets, &ev)?;
        let mut v = p.to_json();
        v["stats"] = json!(p.stats);
        Ok(v)
    })
    .await?)
}

async fn refine(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let op: RefinementOp = body_json(&body)?;
    ok(with_session(&st, &id, move |s| {
        let l = s.apply_refinement(&op)?;
        Ok(json!({
            "schema_version": SCHEMA_VERSION,
            "locality": l,
            "stats": s.stats(),
            "iconized": s.iconized(),
        }))
    })
    .await?)
}

async fn stats(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(with_session(&st, &id, |s| {
        let mut v = json!(s.stats());
        v["schema_version"] = json!(SCHEMA_VERSION);
        if let Some(h) = s.hypertree() {
            let life: serde_json::Map<String, Value> =
                h.subnets.iter().zip(&h.lifetime).map(|(n, c)| (n.path.clone(), json!(c))).collect();
            v["lifetime_cells"] = Value::Object(life);
        }
        Ok(v)
    })
    .await?)
}

async fn session_structure(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(with_session(&st, &id, |s| Ok(s.structure_json())).await?)
}

async fn compatible(State(st): State<AppState>, Path(id): Path<String>, RawQuery(q): RawQuery) -> ApiResult {
    let path = query_pairs(&q).into_iter().find(|(k, _)| k == "path").map(|(_, v)| v);
    let path = path.ok_or_else(|| ApiError::usage("missing `path`"))?;
    ok(with_session(&st, &id, move |s| {
        let classes = s.compatible_classes(&path)?;
        Ok(json!({ "schema_version": SCHEMA_VERSION, "path": path, "classes": classes }))
    })
    .await?)
}

async fn log(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(with_session(&st, &id, |s| Ok(json!({ "schema_version": SCHEMA_VERSION, "log": s.log() }))).await?)
}
