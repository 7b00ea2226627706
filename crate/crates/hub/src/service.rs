//! The HTTP API.
//!
//! Every `/v1` route takes a bearer token. The observing middleware assigns a
//! request id, turns error responses into `{code, message, details,
//! request_id}` bodies and appends one line per request to
//! `<data_dir>/access_log.jsonl`. The mock identity provider is mounted at
//! `/mock-idp` outside that layer.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use qdh_core::access::{Action, Rights, Role};
use qdh_core::objects::{DictionaryEntry, ObjectUpload, StoredObject};
use qdh_core::query::{related_items, run_query, QueryError};
use qdh_core::state::{HubError, IngestMode, Outcome};
use qdh_core::tabular::{Row, TableExtension, TabularError};
use qdh_core::{GemdGraph, HubState, Mutation};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{AuthError, CachingVerifier, HttpVerifier, IssueRequest, MockIdp, TokenBody, TokenVerifier, VerifiedBody};
use crate::codec::json::{parse_gemd_json, to_gemd_json};
use crate::codec::{decode, CodecError, Format};
use crate::hub::{contents_of, Committed, OpenError, SubmitError};
use crate::procedures::{apply_metadata, library, validate_procedure, SampleMetadata};
use crate::{now_timestamp, Hub, HubConfig};

pub const ACCESS_LOG: &str = "access_log.jsonl";
const BODY_LIMIT: usize = 512 * 1024 * 1024;
const DEFAULT_PAGE: usize = 100;
const MAX_PAGE: usize = 1000;

// Errors.

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub details: Value,
}

/// Carried in response extensions until the middleware renders it.
#[derive(Debug, Clone)]
struct ErrorBody(ApiError);

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "INVALID_TOKEN" => StatusCode::UNAUTHORIZED,
        "AUTHZ_DENIED" | "NOT_OWNER" | "NOT_ADMIN" | "UNREGISTERED_USER" | "NOT_MEMBER" | "OWNER_IS_PI" => StatusCode::FORBIDDEN,
        "UNKNOWN_KIND" | "MISSING_KEY" | "MALFORMED" => StatusCode::BAD_REQUEST,
        "SAMPLE_EXISTS" | "OBJECT_EXISTS" | "DUPLICATE_GROUP" | "DUPLICATE_KEY" | "ALREADY_MEMBER_ELSEWHERE" | "ID_COLLISION"
        | "NAME_COLLISION" | "SAMPLE_MISMATCH" => StatusCode::CONFLICT,
        "INVALID_GRAPH" | "CONSTRAINT_FAILED" | "FK_VIOLATION" | "SCHEMA_MISMATCH" | "INVALID_EXTENSION" | "DANGLING_EDGE"
        | "BROKEN_REFERENCE" | "CYCLIC_REFERENCE" | "DUPLICATE_NODE_ID" | "MISSING_CONTENT" | "EMPTY_RIGHTS" | "EMPTY_PATH" => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        c if c.starts_with("UNKNOWN_") => StatusCode::NOT_FOUND,
        "QUOTA_EXCEEDED" => StatusCode::PAYLOAD_TOO_LARGE,
        "IDP_UNAVAILABLE" | "POISONED" => StatusCode::SERVICE_UNAVAILABLE,
        "CRASHED" | "IO_ERROR" | "CORRUPT_LOG" | "CHECKSUM_MISMATCH" | "REPLAY_FAILED" | "INTERNAL" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        // Core error texts lead with their code; the body already has it.
        let message = message.into();
        let message = match message.strip_prefix(code).and_then(|m| m.strip_prefix(": ")) {
            Some(rest) => rest.to_string(),
            None => message,
        };
        ApiError {
            status: status_for(code),
            code: code.to_string(),
            message,
            details: Value::Null,
        }
    }

    fn details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn status(mut self, status: StatusCode) -> Self {
        self.status = status;
        self
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new("INTERNAL", e.to_string())
    }

    fn from_query(e: QueryError) -> Self {
        let status = if e.code() == "UNKNOWN_ID" {
            StatusCode::NOT_FOUND
        } else {
            StatusCode::BAD_REQUEST
        };
        let details = match &e {
            QueryError::Syntax { line, col, expected, found } => json!({"line": line, "col": col, "expected": expected, "found": found}),
            QueryError::Step { step, .. } => json!({"step": step}),
            _ => Value::Null,
        };
        ApiError::new(e.code(), e.to_string()).status(status).details(details)
    }
}

impl From<HubError> for ApiError {
    fn from(e: HubError) -> Self {
        let details = match &e {
            HubError::InvalidGraph(report) => json!(report.violations),
            HubError::ConstraintFailed(failed) => json!(failed),
            HubError::Tabular(t @ TabularError::FkViolation { .. }) => json!({"constraint": t.constraint_number()}),
            _ => Value::Null,
        };
        ApiError::new(e.code(), e.to_string()).details(details)
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Hub(h) => h.into(),
            other => ApiError::new(other.code(), other.to_string()),
        }
    }
}

impl From<CodecError> for ApiError {
    fn from(e: CodecError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        ApiError::new(e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut resp = self.status.into_response();
        resp.extensions_mut().insert(ErrorBody(self));
        resp
    }
}

type ApiResult<T> = Result<T, ApiError>;

// Shared state.

/// Per-request facts the access log records, filled in by handlers.
#[derive(Debug, Default)]
struct LogInfo {
    user: Option<String>,
    objects: Vec<String>,
    basis: Option<String>,
    txids: Vec<u64>,
}

type LogSlot = Arc<Mutex<LogInfo>>;

pub struct AppState {
    pub hub: Arc<Hub>,
    verifier: Arc<CachingVerifier<Box<dyn TokenVerifier>>>,
    idp: Option<MockIdp>,
    access_log: Mutex<File>,
    requests: AtomicU64,
    epoch: u64,
}

impl AppState {
    pub fn new(hub: Arc<Hub>, verifier: Box<dyn TokenVerifier>, token_ttl: Duration, idp: Option<MockIdp>) -> io::Result<Self> {
        let access_log = OpenOptions::new().create(true).append(true).open(hub.data_dir().join(ACCESS_LOG))?;
        let epoch = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(AppState {
            hub,
            verifier: Arc::new(CachingVerifier::new(verifier, token_ttl)),
            idp,
            access_log: Mutex::new(access_log),
            requests: AtomicU64::new(0),
            epoch,
        })
    }

    /// Token verifications that reached the identity provider.
    pub fn idp_calls(&self) -> usize {
        self.verifier.upstream_calls()
    }

    fn next_request_id(&self) -> String {
        let n = self.requests.fetch_add(1, Ordering::Relaxed);
        format!("{:x}-{n:06}", self.epoch)
    }

    fn append_log(&self, record: &Value) {
        let mut line = record.to_string();
        line.push('\n');
        let mut f = self.access_log.lock().expect("access log");
        // A lost access-log line must not fail the request.
        let _ = f.write_all(line.as_bytes());
    }
}

type Shared = Arc<AppState>;

// Middleware.

async fn observe(State(app): State<Shared>, mut req: Request, next: Next) -> Response {
    let started = Instant::now();
    let request_id = app.next_request_id();
    let slot: LogSlot = Arc::default();
    req.extensions_mut().insert(slot.clone());
    let method = req.method().to_string();
    let endpoint = req.uri().path().to_string();

    let mut resp = next.run(req).await;
    let status = resp.status();
    let mut error_code = None;
    if let Some(ErrorBody(err)) = resp.extensions_mut().remove::<ErrorBody>() {
        error_code = Some(err.code.clone());
        resp = render_error(&err, &request_id);
    } else if status.is_client_error() || status.is_server_error() {
        // Rejections from axum's own extractors.
        let (_, body) = resp.into_parts();
        let text = to_bytes(body, 64 * 1024).await.unwrap_or_default();
        let code = match status {
            StatusCode::NOT_FOUND => "NOT_FOUND",
            StatusCode::METHOD_NOT_ALLOWED => "METHOD_NOT_ALLOWED",
            StatusCode::UNSUPPORTED_MEDIA_TYPE => "UNSUPPORTED_MEDIA_TYPE",
            StatusCode::PAYLOAD_TOO_LARGE => "PAYLOAD_TOO_LARGE",
            s if s.is_server_error() => "INTERNAL",
            _ => "MALFORMED",
        };
        let err = ApiError::new(code, String::from_utf8_lossy(&text).into_owned()).status(status);
        error_code = Some(code.to_string());
        resp = render_error(&err, &request_id);
    }
    if let Ok(v) = HeaderValue::from_str(&request_id) {
        resp.headers_mut().insert("x-request-id", v);
    }

    let info = std::mem::take(&mut *slot.lock().expect("log slot"));
    app.append_log(&json!({
        "ts": now_timestamp(),
        "request_id": request_id,
        "user_id": info.user,
        "method": method,
        "endpoint": endpoint,
        "status": resp.status().as_u16(),
        "objects": info.objects,
        "basis": info.basis,
        "txids": info.txids,
        "error": error_code,
        "latency_ms": started.elapsed().as_secs_f64() * 1000.0,
    }));
    resp
}

fn render_error(err: &ApiError, request_id: &str) -> Response {
    let body = json!({
        "code": err.code,
        "message": err.message,
        "details": err.details,
        "request_id": request_id,
    });
    (err.status, Json(body)).into_response()
}

// Authentication.

/// The authenticated caller.
pub struct Principal {
    pub user: String,
    pub admin: bool,
    slot: LogSlot,
}

impl Principal {
    fn note_object(&self, object: &str) {
        self.slot.lock().expect("log slot").objects.push(object.to_string());
    }

    fn note_basis(&self, basis: &str) {
        self.slot.lock().expect("log slot").basis = Some(basis.to_string());
    }

    fn note_commit(&self, committed: &Committed) {
        if let Some(txid) = committed.txid {
            self.slot.lock().expect("log slot").txids.push(txid);
        }
    }
}

impl FromRequestParts<Shared> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, app: &Shared) -> Result<Self, ApiError> {
        let slot = parts.extensions.get::<LogSlot>().cloned().unwrap_or_default();
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| ApiError::new("INVALID_TOKEN", "missing bearer token"))?
            .to_string();
        let verifier = app.verifier.clone();
        let user = tokio::task::spawn_blocking(move || verifier.verify(&token))
            .await
            .map_err(ApiError::internal)??;
        slot.lock().expect("log slot").user = Some(user.clone());
        let snap = app.hub.snapshot();
        let admin = snap.access.is_admin(&user);
        if !admin && snap.access.subject(&user).is_none() {
            return Err(ApiError::new("UNREGISTERED_USER", format!("{user} belongs to no group")));
        }
        Ok(Principal { user, admin, slot })
    }
}

// Helpers.

async fn submit(app: &Shared, p: &Principal, mutation: Mutation, contents: BTreeMap<String, Vec<u8>>) -> ApiResult<Committed> {
    let hub = app.hub.clone();
    let committed = tokio::task::spawn_blocking(move || hub.submit(mutation, &contents))
        .await
        .map_err(ApiError::internal)??;
    p.note_commit(&committed);
    Ok(committed)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

/// Checks that `p` may read `object`, recording the decision basis.
fn require_read(snap: &HubState, p: &Principal, object: &str) -> ApiResult<()> {
    p.note_object(object);
    let live = snap.access.object(object).is_some_and(|o| !o.tombstoned);
    if !live {
        return Err(ApiError::new("UNKNOWN_SAMPLE", format!("no sample {object}")));
    }
    let decision = snap.access.authorize(&p.user, object, Action::Read).map_err(HubError::from)?;
    p.note_basis(decision.basis.as_str());
    if decision.allowed {
        Ok(())
    } else {
        Err(ApiError::new("AUTHZ_DENIED", format!("{} may not read {object}", p.user)).details(json!({"basis": decision.basis})))
    }
}

/// Records the basis the access model gives `p` for `action` on an existing
/// object. Enforcement happens in the mutation itself.
fn note_access(app: &Shared, p: &Principal, object: &str, action: Action) {
    if let Ok(d) = app.hub.snapshot().access.authorize(&p.user, object, action) {
        p.note_basis(d.basis.as_str());
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct PageParams {
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

fn encode_cursor(offset: usize) -> String {
    URL_SAFE_NO_PAD.encode(format!("o:{offset}"))
}

fn decode_cursor(cursor: &str) -> ApiResult<usize> {
    URL_SAFE_NO_PAD
        .decode(cursor)
        .ok()
        .and_then(|b| String::from_utf8(b).ok())
        .and_then(|s| s.strip_prefix("o:").and_then(|n| n.parse().ok()))
        .ok_or_else(|| ApiError::new("BAD_CURSOR", "cursor was not issued by this server"))
}

fn paginate<T>(items: Vec<T>, cursor: Option<&str>, limit: Option<usize>) -> ApiResult<(Vec<T>, Option<String>)> {
    let offset = cursor.map(decode_cursor).transpose()?.unwrap_or(0);
    let limit = limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let total = items.len();
    let page: Vec<T> = items.into_iter().skip(offset).take(limit).collect();
    let next = (offset + limit < total).then(|| encode_cursor(offset + limit));
    Ok((page, next))
}

fn parse_mode(mode: Option<&str>, default: IngestMode) -> ApiResult<IngestMode> {
    match mode {
        None | Some("") => Ok(default),
        Some("create") => Ok(IngestMode::Create),
        Some("replace") => Ok(IngestMode::Replace),
        Some("create_or_replace") | Some("upsert") => Ok(IngestMode::CreateOrReplace),
        Some(other) => Err(ApiError::new("BAD_MODE", format!("unknown ingest mode {other:?}"))),
    }
}

fn graph_json(graph: &GemdGraph) -> Value {
    serde_json::from_str(&to_gemd_json(graph)).unwrap_or(Value::Null)
}

async fn ingest(app: &Shared, p: &Principal, graph: GemdGraph, files: Vec<(String, Vec<u8>)>, mode: IngestMode) -> ApiResult<Response> {
    p.note_object(&graph.sample_id);
    note_access(app, p, &graph.sample_id, Action::Update);
    let contents = contents_of(&files);
    let mutation = Mutation::IngestBundle {
        actor: p.user.clone(),
        graph,
        objects: files.iter().map(|(path, c)| ObjectUpload::from_content(path.clone(), c)).collect(),
        mode,
        now: now_timestamp(),
    };
    let committed = submit(app, p, mutation, contents).await?;
    let Outcome::Ingested(receipt) = committed.outcome else {
        return Err(ApiError::internal("ingest produced no receipt"));
    };
    let status = if receipt.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({"receipt": receipt, "txid": committed.txid}))).into_response())
}

// Handlers: identity.

async fn auth_verify(State(app): State<Shared>, p: Principal) -> Json<Value> {
    let subject = app.hub.snapshot().access.subject(&p.user);
    Json(json!({"user_id": p.user, "admin": p.admin, "subject": subject}))
}

async fn idp_issue(State(app): State<Shared>, Json(req): Json<IssueRequest>) -> ApiResult<Json<TokenBody>> {
    let idp = app.idp.as_ref().ok_or_else(|| ApiError::new("NOT_FOUND", "no mock identity provider"))?;
    if req.user_id.is_empty() {
        return Err(ApiError::new("BAD_USER", "user_id is empty"));
    }
    Ok(Json(TokenBody { token: idp.issue(&req.user_id) }))
}

async fn idp_verify(State(app): State<Shared>, Json(req): Json<TokenBody>) -> Response {
    let Some(idp) = app.idp.as_ref() else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match idp.verify(&req.token) {
        Ok(user_id) => Json(VerifiedBody { user_id }).into_response(),
        Err(e) => (StatusCode::UNAUTHORIZED, Json(json!({"code": e.code(), "message": e.to_string()}))).into_response(),
    }
}

// Handlers: samples and objects.

#[derive(Debug, Serialize)]
struct SampleSummary {
    sample_id: String,
    name: String,
    owner: String,
    date: String,
    status: String,
    project_id: String,
    owning_group: String,
    public: bool,
    versions: usize,
}

async fn list_samples(State(app): State<Shared>, p: Principal, Query(page): Query<PageParams>) -> ApiResult<Json<Value>> {
    let snap = app.hub.snapshot();
    let mut out: Vec<SampleSummary> = Vec::new();
    for id in snap.access.visible_objects(&p.user) {
        let Some(row) = snap.tabular.sample_row(&id) else {
            continue;
        };
        let obj = snap.access.object(&id).expect("visible object exists");
        out.push(SampleSummary {
            owning_group: obj.owning_group.clone(),
            public: obj.public,
            versions: snap.graph.version_count(&id),
            sample_id: row.sample_id,
            name: row.name,
            owner: row.owner,
            date: row.date,
            status: row.status,
            project_id: row.project_id,
        });
    }
    out.sort_by(|a, b| b.date.cmp(&a.date).then_with(|| a.sample_id.cmp(&b.sample_id)));
    let (items, next_cursor) = paginate(out, page.cursor.as_deref(), page.limit)?;
    Ok(Json(json!({"samples": items, "next_cursor": next_cursor})))
}

#[derive(Debug, Deserialize)]
struct UploadedFile {
    path: String,
    content_base64: String,
}

#[derive(Debug, Deserialize)]
struct SampleBody {
    graph: Value,
    #[serde(default)]
    objects: Vec<UploadedFile>,
    #[serde(default)]
    mode: Option<String>,
}

fn sample_body(body: SampleBody) -> ApiResult<(GemdGraph, Vec<(String, Vec<u8>)>, Option<String>)> {
    let graph = parse_gemd_json(&body.graph.to_string())?;
    let mut files = Vec::with_capacity(body.objects.len());
    for f in body.objects {
        let bytes = STANDARD
            .decode(f.content_base64.as_bytes())
            .map_err(|e| ApiError::new("MALFORMED", format!("{}: {e}", f.path)))?;
        files.push((f.path, bytes));
    }
    Ok((graph, files, body.mode))
}

async fn create_sample(State(app): State<Shared>, p: Principal, Json(body): Json<SampleBody>) -> ApiResult<Response> {
    let (graph, files, mode) = sample_body(body)?;
    let mode = parse_mode(mode.as_deref(), IngestMode::Create)?;
    ingest(&app, &p, graph, files, mode).await
}

async fn replace_sample(State(app): State<Shared>, p: Principal, Path(id): Path<String>, Json(body): Json<SampleBody>) -> ApiResult<Response> {
    let (graph, files, _) = sample_body(body)?;
    if graph.sample_id != id {
        return Err(ApiError::new("SAMPLE_MISMATCH", format!("document is for {}, not {id}", graph.sample_id)));
    }
    ingest(&app, &p, graph, files, IngestMode::Replace).await
}

#[derive(Debug, Deserialize)]
struct VersionParam {
    version: Option<usize>,
}

async fn get_sample(State(app): State<Shared>, p: Principal, Path(id): Path<String>, Query(q): Query<VersionParam>) -> ApiResult<Json<Value>> {
    let snap = app.hub.snapshot();
    require_read(&snap, &p, &id)?;
    let graph = snap.graph.graph(&id, q.version).map_err(HubError::from)?;
    let objects: Vec<&StoredObject> = snap.objects.latest_for_sample(&id).collect();
    Ok(Json(json!({
        "sample_id": id,
        "row": snap.tabular.sample_row(&id),
        "access": snap.access.object(&id),
        "version": q.version.unwrap_or_else(|| snap.graph.version_count(&id)),
        "versions": snap.graph.version_count(&id),
        "graph": graph_json(graph),
        "objects": objects,
    })))
}

#[derive(Debug, Deserialize)]
struct PathParam {
    path: String,
}

async fn put_object(State(app): State<Shared>, p: Principal, Path(id): Path<String>, Query(q): Query<PathParam>, body: Bytes) -> ApiResult<Response> {
    p.note_object(&id);
    note_access(&app, &p, &id, Action::Write);
    let content = body.to_vec();
    let upload = ObjectUpload::from_content(q.path, &content);
    let contents = BTreeMap::from([(upload.checksum.clone(), content)]);
    let mutation = Mutation::PutObject {
        actor: p.user.clone(),
        sample_id: id,
        upload,
        now: now_timestamp(),
    };
    let committed = submit(&app, &p, mutation, contents).await?;
    match committed.outcome {
        Outcome::Object(stored) => Ok((StatusCode::CREATED, Json(stored)).into_response()),
        _ => Err(ApiError::internal("object upload produced no record")),
    }
}

#[derive(Debug, Deserialize)]
struct PublicBody {
    public: bool,
}

async fn set_public(State(app): State<Shared>, p: Principal, Path(id): Path<String>, Json(body): Json<PublicBody>) -> ApiResult<Json<Value>> {
    p.note_object(&id);
    let mutation = Mutation::SetPublic {
        actor: p.user.clone(),
        object: id.clone(),
        public: body.public,
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    Ok(Json(json!({"object": id, "public": body.public, "txid": committed.txid})))
}

#[derive(Debug, Deserialize)]
struct ObjectParams {
    path: String,
    version: Option<u32>,
    #[serde(default)]
    meta: bool,
    #[serde(default)]
    history: bool,
}

async fn get_object(State(app): State<Shared>, p: Principal, Query(q): Query<ObjectParams>) -> ApiResult<Response> {
    let snap = app.hub.snapshot();
    let meta = snap.objects.get_meta(&q.path, q.version).map_err(HubError::from)?.clone();
    require_read(&snap, &p, &meta.sample_id)?;
    p.note_object(&q.path);
    if q.history {
        return Ok(Json(snap.objects.version_history(&q.path).to_vec()).into_response());
    }
    if q.meta {
        return Ok(Json(meta).into_response());
    }
    let hub = app.hub.clone();
    let m = meta.clone();
    let content = blocking(move || hub.read_object(&m)).await??;
    let mut resp = (StatusCode::OK, content).into_response();
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/octet-stream"));
    if let Ok(v) = HeaderValue::from_str(&meta.checksum) {
        h.insert("x-qdh-checksum", v);
    }
    h.insert("x-qdh-version", HeaderValue::from(meta.version));
    Ok(resp)
}

// Handlers: query and navigation.

#[derive(Debug, Deserialize)]
struct QueryBody {
    query: String,
    cursor: Option<String>,
    limit: Option<usize>,
}

fn is_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"))
}

async fn query(State(app): State<Shared>, p: Principal, Query(page): Query<PageParams>, headers: HeaderMap, body: Bytes) -> ApiResult<Json<Value>> {
    let (text, cursor, limit) = if is_json(&headers) {
        let b: QueryBody = serde_json::from_slice(&body).map_err(|e| ApiError::new("MALFORMED", e.to_string()))?;
        (b.query, b.cursor.or(page.cursor), b.limit.or(page.limit))
    } else {
        let text = String::from_utf8(body.to_vec()).map_err(|e| ApiError::new("MALFORMED", e.to_string()))?;
        (text, page.cursor, page.limit)
    };
    let snap = app.hub.snapshot();
    let user = p.user.clone();
    let result = blocking(move || run_query(&snap, &user, &text)).await?.map_err(ApiError::from_query)?;
    let (rows, next_cursor) = paginate(result.rows, cursor.as_deref(), limit)?;
    Ok(Json(json!({"columns": result.columns, "rows": rows, "next_cursor": next_cursor})))
}

async fn navigate(State(app): State<Shared>, p: Principal, Path(id): Path<String>, Query(page): Query<PageParams>) -> ApiResult<Json<Value>> {
    p.note_object(&id);
    let snap = app.hub.snapshot();
    let user = p.user.clone();
    let target = id.clone();
    let items = blocking(move || related_items(&snap, &target, &user)).await?.map_err(ApiError::from_query)?;
    let (items, next_cursor) = paginate(items, page.cursor.as_deref(), page.limit)?;
    Ok(Json(json!({"id": id, "items": items, "next_cursor": next_cursor})))
}

// Handlers: bulk ingest.

#[derive(Debug, Default, Deserialize)]
struct BulkParams {
    format: Option<String>,
    mode: Option<String>,
}

fn format_of(name: Option<&str>, file_name: Option<&str>) -> ApiResult<Option<Format>> {
    if let Some(n) = name.filter(|n| !n.is_empty()) {
        return Format::parse(n)
            .map(Some)
            .ok_or_else(|| ApiError::new("BAD_FORMAT", format!("unknown format {n:?}")));
    }
    let ext = file_name.and_then(|f| f.rsplit_once('.')).map(|(_, e)| e.to_ascii_lowercase());
    Ok(match ext.as_deref() {
        Some("graphml") | Some("xml") => Some(Format::GraphMl),
        Some("json") => Some(Format::GemdJson),
        Some("zip") => Some(Format::Zip),
        _ => None,
    })
}

async fn ingest_bulk(State(app): State<Shared>, p: Principal, Query(params): Query<BulkParams>, req: Request) -> ApiResult<Response> {
    let multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let mut bundle: Option<(Vec<u8>, Option<String>)> = None;
    let mut format = params.format;
    let mut mode = params.mode;
    let mut extra: Vec<(String, Vec<u8>)> = Vec::new();
    if multipart {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::new("MALFORMED", e.body_text()))?;
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::new("MALFORMED", e.body_text()))? {
            let name = field.name().unwrap_or_default().to_string();
            let file_name = field.file_name().map(str::to_string);
            let bytes = field.bytes().await.map_err(|e| ApiError::new("MALFORMED", e.body_text()))?.to_vec();
            let text = || String::from_utf8_lossy(&bytes).trim().to_string();
            match name.as_str() {
                "bundle" => bundle = Some((bytes.clone(), file_name)),
                "format" => format = Some(text()),
                "mode" => mode = Some(text()),
                "object" => {
                    let path = file_name.ok_or_else(|| ApiError::new("MALFORMED", "object part without a file name"))?;
                    extra.push((path, bytes));
                }
                other => return Err(ApiError::new("MALFORMED", format!("unexpected form field {other:?}"))),
            }
        }
    } else {
        let body = to_bytes(req.into_body(), BODY_LIMIT)
            .await
            .map_err(|e| ApiError::new("MALFORMED", e.to_string()))?;
        bundle = Some((body.to_vec(), None));
    }
    let (bytes, file_name) = bundle.ok_or_else(|| ApiError::new("MALFORMED", "no bundle supplied"))?;
    let format = format_of(format.as_deref(), file_name.as_deref())?;
    let mode = parse_mode(mode.as_deref(), IngestMode::CreateOrReplace)?;
    let decoded = blocking(move || decode(&bytes, format)).await??;
    let mut files = decoded.files;
    files.extend(extra);
    ingest(&app, &p, decoded.graph, files, mode).await
}

// Handlers: groups, grants, administration.

#[derive(Debug, Deserialize)]
struct GroupBody {
    group_id: String,
    owner: String,
}

async fn create_group(State(app): State<Shared>, p: Principal, Json(body): Json<GroupBody>) -> ApiResult<Response> {
    let mutation = Mutation::CreateGroup {
        actor: p.user.clone(),
        group_id: body.group_id.clone(),
        owner: body.owner.clone(),
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    Ok((StatusCode::CREATED, Json(json!({"group_id": body.group_id, "owner": body.owner, "txid": committed.txid}))).into_response())
}

#[derive(Debug, Deserialize)]
struct MemberBody {
    user: String,
    #[serde(default = "default_role")]
    role: Role,
    #[serde(default)]
    representative: Option<bool>,
}

fn default_role() -> Role {
    Role::Student
}

async fn add_member(State(app): State<Shared>, p: Principal, Path(group): Path<String>, Json(body): Json<MemberBody>) -> ApiResult<Response> {
    let snap = app.hub.snapshot();
    let already = snap.access.group(&group).is_some_and(|g| g.members.contains_key(&body.user));
    let mut txids = Vec::new();
    if !already {
        let mutation = Mutation::AddMember {
            actor: p.user.clone(),
            group_id: group.clone(),
            user: body.user.clone(),
            role: body.role,
        };
        txids.extend(submit(&app, &p, mutation, BTreeMap::new()).await?.txid);
    }
    if let Some(representative) = body.representative {
        let mutation = Mutation::SetRepresentative {
            actor: p.user.clone(),
            group_id: group.clone(),
            user: body.user.clone(),
            representative,
        };
        txids.extend(submit(&app, &p, mutation, BTreeMap::new()).await?.txid);
    }
    let status = if already { StatusCode::OK } else { StatusCode::CREATED };
    let group = app.hub.snapshot().access.group(&group).cloned();
    Ok((status, Json(json!({"group": group, "txids": txids}))).into_response())
}

#[derive(Debug, Deserialize)]
struct GrantBody {
    subject: String,
    object: String,
    rights: Rights,
}

async fn grant(State(app): State<Shared>, p: Principal, Json(body): Json<GrantBody>) -> ApiResult<Json<Value>> {
    p.note_object(&body.object);
    let mutation = Mutation::Grant {
        actor: p.user.clone(),
        subject: body.subject,
        object: body.object,
        rights: body.rights,
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    let outcome = match committed.outcome {
        Outcome::Grant { outcome } => outcome,
        _ => return Err(ApiError::internal("grant produced no outcome")),
    };
    Ok(Json(json!({"outcome": outcome, "txid": committed.txid})))
}

#[derive(Debug, Deserialize)]
struct ObjectBody {
    object: String,
}

async fn tombstone(State(app): State<Shared>, p: Principal, Json(body): Json<ObjectBody>) -> ApiResult<Json<Value>> {
    p.note_object(&body.object);
    let mutation = Mutation::Tombstone {
        actor: p.user.clone(),
        object: body.object.clone(),
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    Ok(Json(json!({"object": body.object, "tombstoned": true, "txid": committed.txid})))
}

async fn restore(State(app): State<Shared>, p: Principal, Json(body): Json<ObjectBody>) -> ApiResult<Json<Value>> {
    p.note_object(&body.object);
    let mutation = Mutation::Restore {
        actor: p.user.clone(),
        object: body.object.clone(),
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    Ok(Json(json!({"object": body.object, "tombstoned": false, "txid": committed.txid})))
}

async fn access_log(State(app): State<Shared>, p: Principal, Query(page): Query<PageParams>) -> ApiResult<Json<Value>> {
    if !p.admin {
        return Err(ApiError::new("NOT_ADMIN", format!("{} is not an administrator", p.user)));
    }
    let path = app.hub.data_dir().join(ACCESS_LOG);
    let text = blocking(move || std::fs::read_to_string(path)).await?.map_err(ApiError::internal)?;
    let records: Vec<Value> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    let (records, next_cursor) = paginate(records, page.cursor.as_deref(), page.limit)?;
    Ok(Json(json!({"records": records, "next_cursor": next_cursor})))
}

// Handlers: tables and onboarding.

#[derive(Debug, Deserialize)]
struct RowBody {
    row: Row,
    #[serde(default)]
    sample: Option<String>,
}

async fn insert_row(State(app): State<Shared>, p: Principal, Path(table): Path<String>, Json(body): Json<RowBody>) -> ApiResult<Response> {
    if let Some(s) = &body.sample {
        p.note_object(s);
    }
    let mutation = Mutation::InsertRow {
        actor: p.user.clone(),
        table,
        row: body.row,
        sample: body.sample,
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    match committed.outcome {
        Outcome::Row { table, key } => Ok((StatusCode::CREATED, Json(json!({"table": table, "key": key, "txid": committed.txid}))).into_response()),
        _ => Err(ApiError::internal("insert produced no row")),
    }
}

async fn onboard_schema(State(app): State<Shared>, p: Principal, Json(extension): Json<TableExtension>) -> ApiResult<Response> {
    let table = extension.table_name.clone();
    let mutation = Mutation::RegisterExtension {
        actor: p.user.clone(),
        extension,
    };
    let committed = submit(&app, &p, mutation, BTreeMap::new()).await?;
    Ok((StatusCode::CREATED, Json(json!({"table_name": table, "txid": committed.txid}))).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

async fn onboard_dictionary(State(app): State<Shared>, p: Principal, Json(body): Json<OneOrMany<DictionaryEntry>>) -> ApiResult<Json<Value>> {
    let entries = match body {
        OneOrMany::One(e) => vec![e],
        OneOrMany::Many(v) => v,
    };
    let mut names = Vec::new();
    for entry in entries {
        names.push(entry.characterization.clone());
        let mutation = Mutation::UpdateDictionary {
            actor: p.user.clone(),
            entry,
        };
        submit(&app, &p, mutation, BTreeMap::new()).await?;
    }
    Ok(Json(json!({"characterizations": names})))
}

// Handlers: procedure editor.

async fn procedure_library(_p: Principal) -> Json<Value> {
    Json(json!(library()))
}

async fn procedure_validate(_p: Principal, body: String) -> Json<Value> {
    let (_, report) = validate_procedure(&body);
    Json(json!(report))
}

#[derive(Debug, Deserialize)]
struct ProcedureSubmit {
    graphml: String,
    #[serde(default)]
    metadata: SampleMetadata,
}

async fn procedure_submit(State(app): State<Shared>, p: Principal, Json(body): Json<ProcedureSubmit>) -> ApiResult<Response> {
    let (graph, report) = validate_procedure(&body.graphml);
    let graph = match graph {
        Some(g) if report.ok => g,
        _ => {
            return Err(ApiError::new("INVALID_GRAPH", format!("{} violation(s)", report.violations.len())).details(json!(report.violations)));
        }
    };
    let mut graph = graph;
    apply_metadata(&mut graph, &body.metadata);
    let sample_id = graph.sample_id.clone();
    let resp = ingest(&app, &p, graph, Vec::new(), IngestMode::Create).await?;
    let status = resp.status();
    let body = to_bytes(resp.into_body(), BODY_LIMIT).await.map_err(ApiError::internal)?;
    let mut value: Value = serde_json::from_slice(&body).map_err(ApiError::internal)?;
    value["sample_id"] = json!(sample_id);
    Ok((status, Json(value)).into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

// Router and server.

pub fn router(app: Shared) -> Router {
    let v1 = Router::new()
        .route("/auth/verify", post(auth_verify))
        .route("/samples", get(list_samples).post(create_sample))
        .route("/samples/{id}", get(get_sample).put(replace_sample))
        .route("/samples/{id}/objects", post(put_object))
        .route("/samples/{id}/public", post(set_public))
        .route("/objects", get(get_object))
        .route("/query", post(query))
        .route("/navigate/{*id}", get(navigate))
        .route("/ingest/bulk", post(ingest_bulk))
        .route("/groups", post(create_group))
        .route("/groups/{id}/members", post(add_member))
        .route("/grants", post(grant))
        .route("/admin/tombstone", post(tombstone))
        .route("/admin/restore", post(restore))
        .route("/tables/{table}/rows", post(insert_row))
        .route("/onboarding/schema", post(onboard_schema))
        .route("/onboarding/dictionary", post(onboard_dictionary))
        .route("/procedures/library", get(procedure_library))
        .route("/procedures/validate", post(procedure_validate))
        .route("/procedures/submit", post(procedure_submit))
        .route("/log", get(access_log));
    Router::new()
        .nest("/v1", v1)
        .layer(middleware::from_fn_with_state(app.clone(), observe))
        .route("/mock-idp/issue", post(idp_issue))
        .route("/mock-idp/verify", post(idp_verify))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(app)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub hub: HubConfig,
    pub addr: SocketAddr,
    /// External identity provider; `None` verifies against this server's
    /// own `/mock-idp` over a real socket.
    pub idp_url: Option<String>,
    /// Secret of the built-in mock provider; `None` disables it.
    pub idp_secret: Option<String>,
    pub token_ttl: Duration,
    /// Stop on Ctrl-C as well as on [`RunningServer::stop`].
    pub handle_signals: bool,
}

impl ServeOptions {
    pub fn new(hub: HubConfig) -> Self {
        ServeOptions {
            hub,
            addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            idp_url: None,
            idp_secret: Some(DEV_IDP_SECRET.to_string()),
            token_ttl: Duration::from_secs(300),
            handle_signals: false,
        }
    }
}

/// Secret the mock provider uses unless one is configured.
pub const DEV_IDP_SECRET: &str = "qdh-dev-secret";

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Open(#[from] OpenError),
    #[error("cannot listen: {0}")]
    Io(#[from] io::Error),
    #[error("no identity provider: pass an idp url or a mock secret")]
    NoIdp,
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub app: Shared,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits on its own (signal).
    pub fn wait(mut self) -> io::Result<()> {
        self.thread.take().map_or(Ok(()), |t| t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))))
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown_now()
    }

    fn shutdown_now(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.thread.take().map_or(Ok(()), |t| t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))))
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.shutdown_now();
    }
}

/// Opens the hub, binds, and serves on a background thread.
pub fn start(opts: ServeOptions) -> Result<RunningServer, ServeError> {
    let hub = Arc::new(Hub::open(&opts.hub)?);
    let listener = std::net::TcpListener::bind(opts.addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let idp = opts.idp_secret.as_deref().map(MockIdp::new);
    let idp_url = match (&opts.idp_url, &idp) {
        (Some(url), _) => url.clone(),
        (None, Some(_)) => format!("http://{addr}"),
        (None, None) => return Err(ServeError::NoIdp),
    };
    let verifier: Box<dyn TokenVerifier> = Box::new(HttpVerifier::new(&idp_url));
    let app = Arc::new(AppState::new(hub, verifier, opts.token_ttl, idp)?);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let routes = router(app.clone());
    let handle_signals = opts.handle_signals;
    let thread = std::thread::Builder::new().name("qdh-serve".into()).spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            let stop = async move {
                if handle_signals {
                    tokio::select! {
                        _ = rx => {}
                        _ = tokio::signal::ctrl_c() => {}
                    }
                } else {
                    let _ = rx.await;
                }
            };
            axum::serve(listener, routes).with_graceful_shutdown(stop).await
        })
    })?;
    Ok(RunningServer {
        addr,
        app,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
