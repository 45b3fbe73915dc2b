use super::auth::{authenticate, require_admin, require_customer, token_hash, Principal, TokenTable};
use super::chain::{CommitOutcome, LedgerHandle};
use super::config::ServiceConfig;
use super::images::{content_type, ImageStore};
use super::store::{CustomerAccount, MeterRecord, ReadingRecord, ReadingSource, ReadingStore, StoreError};
use crate::imaging::decode_image;
use crate::ledger::{Geo, RejectReason};
use crate::ocr::{detect_text, DetectRequest, TextDetection, TextDetector};
use crate::refinement::{is_register_value, refine, Candidate, MeterContext, DEFAULT_MAX_DELTA, MAX_REGISTER_LENGTH};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{middleware, Extension, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub store: Arc<dyn ReadingStore>,
    pub images: Arc<ImageStore>,
    pub backend: Arc<dyn TextDetector>,
    pub ledger: Arc<LedgerHandle>,
    pub tokens: Arc<TokenTable>,
    /// Latest scan candidate per (meter, image digest), used to tag confirms.
    pub scans: Arc<Mutex<HashMap<(String, String), String>>>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub extra: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), extra: None }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or unknown bearer token")
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "Forbidden", "token role does not permit this route")
    }

    fn not_found(code: &'static str, what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, format!("`{what}` not found"))
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Unprocessable", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("internal error: {e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
    }

    fn with_extra(mut self, extra: Value) -> Self {
        self.extra = Some(extra);
        self
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Conflict(id) => ApiError::new(StatusCode::CONFLICT, "Conflict", format!("`{id}` already exists")),
            other => ApiError::internal(other),
        }
    }
}

impl From<super::chain::ChainError> for ApiError {
    fn from(e: super::chain::ChainError) -> Self {
        ApiError::internal(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (self.extra, &mut body) {
            map.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn now_ms() -> u64 {
    chrono::Utc::now().timestamp_millis().max(0) as u64
}

/// The meter, if this principal may see it.
fn visible_meter(state: &AppState, p: &Principal, meter_id: &str) -> ApiResult<MeterRecord> {
    state
        .store
        .meter(meter_id)
        .filter(|m| p.is_admin() || p.owns(&m.customer_id))
        .ok_or_else(|| ApiError::not_found("UnknownMeter", meter_id))
}

fn last_reading(state: &AppState, meter: &MeterRecord) -> String {
    state.ledger.last_reading(&meter.meter_id).unwrap_or_else(|| meter.initial_reading.clone())
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_upload_bytes;
    let admin = || middleware::from_fn(require_admin);
    let customer = || middleware::from_fn(require_customer);
    Router::new()
        .route("/api/scan", post(scan).route_layer(customer()))
        .route("/api/confirm", post(confirm).route_layer(customer()))
        .route("/api/admin/readings", get(admin_readings).route_layer(admin()))
        .route("/api/admin/reconcile", get(admin_reconcile).route_layer(admin()))
        .route("/api/customers", post(create_customer).get(list_customers).route_layer(admin()))
        .route("/api/customers/{id}", get(get_customer))
        .route("/api/meters", get(list_meters).merge(post(create_meter).route_layer(admin())))
        .route("/api/meters/{id}", get(get_meter))
        .route("/api/meters/{id}/readings", get(meter_readings))
        .route("/api/images/{digest}", get(get_image))
        .route("/api/ledger/status", get(ledger_status))
        .layer(middleware::from_fn_with_state(state.clone(), authenticate))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
pub struct ScanQuery {
    pub meter_id: String,
    #[serde(default)]
    pub lat: Option<f64>,
    #[serde(default)]
    pub lon: Option<f64>,
    /// Fetch the image from this URL instead of the body; needs `allow_url_ingest`.
    #[serde(default)]
    pub url: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScanResponse {
    pub candidate_reading: String,
    pub fallback: bool,
    pub detections: Vec<TextDetection>,
    pub candidates: Vec<Candidate>,
    pub image_digest: String,
}

fn fetch_url(url: &str, limit: usize) -> Result<Vec<u8>, String> {
    let mut resp = ureq::get(url).call().map_err(|e| e.to_string())?;
    resp.body_mut().with_config().limit(limit as u64).read_to_vec().map_err(|e| e.to_string())
}

async fn scan(
    State(state): State<AppState>,
    Extension(p): Extension<Principal>,
    Query(q): Query<ScanQuery>,
    body: Bytes,
) -> ApiResult<Json<ScanResponse>> {
    let meter = visible_meter(&state, &p, &q.meter_id)?;
    let bytes: Vec<u8> = match (&q.url, body.is_empty()) {
        (Some(url), true) => {
            if !state.config.allow_url_ingest {
                return Err(ApiError::unprocessable("URL ingest is disabled"));
            }
            let (url, limit) = (url.clone(), state.config.max_upload_bytes);
            tokio::task::spawn_blocking(move || fetch_url(&url, limit))
                .await
                .map_err(ApiError::internal)?
                .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "FetchFailed", e))?
        }
        _ => body.to_vec(),
    };
    let image = decode_image(&bytes).map_err(|e| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UndecodableImage", e.to_string()))?;
    let digest = state.images.put(&bytes).map_err(ApiError::internal)?;
    let last = last_reading(&state, &meter);
    let ctx = MeterContext::new(last.clone(), meter.max_delta).map_err(ApiError::internal)?;

    let backend = state.backend.clone();
    let d = digest.clone();
    let detected = tokio::task::spawn_blocking(move || {
        detect_text(backend.as_ref(), &DetectRequest { image: &image, encoded: Some(&bytes), source_digest: &d })
    })
    .await
    .map_err(ApiError::internal)?;

    match detected {
        Ok(detections) => {
            let result = refine(&detections, &ctx);
            state
                .scans
                .lock()
                .expect("scan memo lock")
                .insert((meter.meter_id.clone(), digest.clone()), result.reading.clone());
            Ok(Json(ScanResponse {
                candidate_reading: result.reading,
                fallback: result.fallback,
                detections,
                candidates: result.candidates,
                image_digest: digest,
            }))
        }
        Err(e) => {
            log::warn!("backend {} failed on {digest}: {e}", state.backend.name());
            Err(ApiError::new(StatusCode::BAD_GATEWAY, "BackendUnavailable", e.to_string()).with_extra(json!({
                "candidate_reading": last,
                "fallback": true,
                "detections": [],
                "candidates": [],
                "image_digest": digest,
            })))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ConfirmRequest {
    pub meter_id: String,
    pub reading: String,
    pub image_digest: String,
    #[serde(default)]
    pub geo: Option<Geo>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfirmResponse {
    pub ledger_height: u64,
    pub tx_id: String,
}

async fn confirm(
    State(state): State<AppState>,
    Extension(p): Extension<Principal>,
    Json(req): Json<ConfirmRequest>,
) -> ApiResult<Json<ConfirmResponse>> {
    let meter = visible_meter(&state, &p, &req.meter_id)?;
    if !is_register_value(&req.reading) || req.reading.len() != meter.register_length {
        return Err(ApiError::unprocessable(format!("reading must be exactly {} digits", meter.register_length)));
    }
    if !state.images.contains(&req.image_digest) {
        return Err(ApiError::not_found("UnknownImage", &req.image_digest));
    }
    let scanned = state.scans.lock().expect("scan memo lock").get(&(meter.meter_id.clone(), req.image_digest.clone())).cloned();
    let source = if scanned.as_deref() == Some(req.reading.as_str()) {
        ReadingSource::Scanned
    } else {
        ReadingSource::ManualOverride
    };
    let geo = req.geo.unwrap_or(meter.geo);
    let timestamp_ms = now_ms();
    let tx = state.ledger.prepare(&meter.meter_id, &req.reading, timestamp_ms, &req.image_digest, geo);
    let record = state.store.put_reading(ReadingRecord {
        tx_id: tx.tx_id.clone(),
        meter_id: meter.meter_id.clone(),
        customer_id: meter.customer_id.clone(),
        reading: req.reading.clone(),
        timestamp_ms,
        image_digest: req.image_digest.clone(),
        geo,
        source,
        ledger_height: None,
        seq: 0,
    })?;
    let tx_id = tx.tx_id.clone();
    state.ledger.propose(tx)?;
    match state.ledger.wait_commit(&tx_id).await? {
        CommitOutcome::Committed(height) => {
            state.store.put_reading(ReadingRecord { ledger_height: Some(height), ..record })?;
            Ok(Json(ConfirmResponse { ledger_height: height, tx_id }))
        }
        CommitOutcome::Rejected(reason) => {
            state.store.remove_reading(&tx_id)?;
            let reason_str = reason.to_string();
            let msg = match reason {
                RejectReason::Endorsement(_) => "endorser rejected the reading",
                RejectReason::Ordering(_) => "orderer rejected the reading",
            };
            Err(ApiError::new(StatusCode::CONFLICT, "LedgerRejected", msg).with_extra(json!({ "reason": reason_str, "tx_id": tx_id })))
        }
        CommitOutcome::TimedOut => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "CommitTimeout", "block not committed in time")
            .with_extra(json!({ "tx_id": tx_id }))),
    }
}

#[derive(Debug, Deserialize)]
pub struct PageQuery {
    #[serde(default)]
    pub customer_id: Option<String>,
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug, Serialize, Deserialize)]
pub struct ReadingView {
    #[serde(flatten)]
    pub record: ReadingRecord,
    pub image_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Page<T> {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<T>,
}

fn paginate(mut records: Vec<ReadingRecord>, q: &PageQuery) -> ApiResult<Page<ReadingView>> {
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 || page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::unprocessable(format!("page must be ≥ 1 and page_size in 1..={MAX_PAGE_SIZE}")));
    }
    records.retain(ReadingRecord::is_committed);
    records.sort_by(|a, b| b.seq.cmp(&a.seq));
    let total = records.len();
    let items = records
        .into_iter()
        .skip((page - 1).saturating_mul(page_size))
        .take(page_size)
        .map(|record| ReadingView { image_url: format!("/api/images/{}", record.image_digest), record })
        .collect();
    Ok(Page { page, page_size, total, items })
}

async fn admin_readings(
    State(state): State<AppState>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<Page<ReadingView>>> {
    let mut records = state.store.readings();
    if let Some(c) = &q.customer_id {
        records.retain(|r| &r.customer_id == c);
    }
    Ok(Json(paginate(records, &q)?))
}

async fn admin_reconcile(State(state): State<AppState>) -> ApiResult<Json<super::ReconcileReport>> {
    Ok(Json(super::reconcile(state.store.as_ref(), &state.ledger.blocks())))
}

#[derive(Debug, Deserialize)]
pub struct CreateCustomer {
    pub customer_id: String,
    pub name: String,
    #[serde(default)]
    pub address: String,
    #[serde(default)]
    pub contact: String,
    /// Bearer token for this customer; only its hash is kept.
    #[serde(default)]
    pub token: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CustomerView {
    pub customer_id: String,
    pub name: String,
    pub address: String,
    pub contact: String,
    pub meters: Vec<String>,
}

fn customer_view(state: &AppState, c: CustomerAccount) -> CustomerView {
    let meters = state.store.meters().into_iter().filter(|m| m.customer_id == c.customer_id).map(|m| m.meter_id).collect();
    CustomerView { customer_id: c.customer_id, name: c.name, address: c.address, contact: c.contact, meters }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

async fn create_customer(
    State(state): State<AppState>,
    Json(req): Json<CreateCustomer>,
) -> ApiResult<(StatusCode, Json<CustomerView>)> {
    if !valid_id(&req.customer_id) {
        return Err(ApiError::unprocessable("customer_id must be 1-64 of [A-Za-z0-9_-]"));
    }
    if req.token.as_deref().is_some_and(str::is_empty) {
        return Err(ApiError::unprocessable("token must not be empty"));
    }
    let account = CustomerAccount {
        customer_id: req.customer_id,
        name: req.name,
        address: req.address,
        contact: req.contact,
        auth_token_hash: req.token.as_deref().map(token_hash),
    };
    state.store.insert_customer(account.clone())?;
    Ok((StatusCode::CREATED, Json(customer_view(&state, account))))
}

async fn list_customers(State(state): State<AppState>) -> ApiResult<Json<Vec<CustomerView>>> {
    Ok(Json(state.store.customers().into_iter().map(|c| customer_view(&state, c)).collect()))
}

async fn get_customer(
    State(state): State<AppState>,
    Extension(p): Extension<Principal>,
    Path(id): Path<String>,
) -> ApiResult<Json<CustomerView>> {
    let c = state
        .store
        .customer(&id)
        .filter(|_| p.is_admin() || p.owns(&id))
        .ok_or_else(|| ApiError::not_found("UnknownCustomer", &id))?;
    Ok(Json(customer_view(&state, c)))
}

#[derive(Debug, Deserialize)]
pub struct CreateMeter {
    pub meter_id: String,
    pub customer_id: String,
    pub register_length: usize,
    #[serde(default)]
    pub max_delta: Option<u64>,
    pub initial_reading: String,
    pub geo: Geo,
}

async fn create_meter(
    State(state): State<AppState>,
    Json(req): Json<CreateMeter>,
) -> ApiResult<(StatusCode, Json<MeterRecord>)> {
    if !valid_id(&req.meter_id) {
        return Err(ApiError::unprocessable("meter_id must be 1-64 of [A-Za-z0-9_-]"));
    }
    if !(1..=MAX_REGISTER_LENGTH).contains(&req.register_length) {
        return Err(ApiError::unprocessable(format!("register_length must be in 1..={MAX_REGISTER_LENGTH}")));
    }
    if !is_register_value(&req.initial_reading) || req.initial_reading.len() != req.register_length {
        return Err(ApiError::unprocessable("initial_reading must have register_length digits"));
    }
    if state.store.customer(&req.customer_id).is_none() {
        return Err(ApiError::not_found("UnknownCustomer", &req.customer_id));
    }
    let meter = MeterRecord {
        meter_id: req.meter_id,
        customer_id: req.customer_id,
        register_length: req.register_length,
        max_delta: req.max_delta.unwrap_or(DEFAULT_MAX_DELTA),
        initial_reading: req.initial_reading,
        geo: req.geo,
    };
    state.store.insert_meter(meter.clone())?;
    state.ledger.register_meter(&meter.meter_id, &meter.initial_reading);
    Ok((StatusCode::CREATED, Json(meter)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MeterView {
    #[serde(flatten)]
    pub meter: MeterRecord,
    pub last_reading: String,
}

async fn list_meters(State(state): State<AppState>, Extension(p): Extension<Principal>) -> ApiResult<Json<Vec<MeterView>>> {
    let views = state
        .store
        .meters()
        .into_iter()
        .filter(|m| p.is_admin() || p.owns(&m.customer_id))
        .map(|meter| MeterView { last_reading: last_reading(&state, &meter), meter })
        .collect();
    Ok(Json(views))
}

async fn get_meter(
    State(state): State<AppState>,
    Extension(p): Extension<Principal>,
    Path(id): Path<String>,
) -> ApiResult<Json<MeterView>> {
    let meter = visible_meter(&state, &p, &id)?;
    Ok(Json(MeterView { last_reading: last_reading(&state, &meter), meter }))
}

async fn meter_readings(
    State(state): State<AppState>,
    Extension(p): Extension<Principal>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<Page<ReadingView>>> {
    let meter = visible_meter(&state, &p, &id)?;
    let records = state.store.readings().into_iter().filter(|r| r.meter_id == meter.meter_id).collect();
    Ok(Json(paginate(records, &q)?))
}

async fn get_image(State(state): State<AppState>, Path(digest): Path<String>) -> ApiResult<Response> {
    let bytes = state.images.get(&digest).map_err(ApiError::internal)?.ok_or_else(|| ApiError::not_found("UnknownImage", &digest))?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes))], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct LedgerStatus {
    pub height: u64,
    pub tx_count: usize,
}

async fn ledger_status(State(state): State<AppState>) -> Json<LedgerStatus> {
    let (height, tx_count) = state.ledger.summary();
    Json(LedgerStatus { height, tx_count })
}
