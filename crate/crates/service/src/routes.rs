//! Route table and handlers.
//!
//! List endpoints are sorted: collections by id, pages by book then page
//! id, classes by class key, hit lists by descending score, prospects by
//! descending score then class key.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use wordharvest::harvest::{Engine, LabelBatch, RecomputeRequest, RejectedLabel};
use wordharvest::imaging::io::{decode_gray, encode_png};
use wordharvest::imaging::BinaryImage;
use wordharvest::ranking::UncertaintyCurves;
use wordharvest::segmentation::{Rect, ZoneSource};
use wordharvest::store::{DownloadToken, ExportKind, ExportRecord, WordlistFilter};

use crate::error::{ApiError, ApiResult};
use crate::{AppState, Collection};

const MAX_UPLOAD: usize = 64 << 20;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/collections", post(create_collection).get(list_collections))
        .route(
            "/collections/{c}/pages",
            post(upload_page).get(list_pages).layer(DefaultBodyLimit::max(MAX_UPLOAD)),
        )
        .route("/collections/{c}/pages/{p}", get(get_page))
        .route("/collections/{c}/pages/{p}/zones", post(add_zone))
        .route("/collections/{c}/prepare", post(prepare))
        .route("/collections/{c}/classes", get(list_classes))
        .route("/collections/{c}/prospects", get(prospects))
        .route("/collections/{c}/metrics/harvest", get(harvest))
        .route("/collections/{c}/cycle", post(cycle))
        .route("/collections/{c}/zones/{z}/image", get(zone_image))
        .route("/classes/{c}/{k}/hitlist", get(hitlist))
        .route("/labels", post(submit_labels))
        .route("/exports", post(create_export))
        .route("/downloads/{token}", get(download));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .layer(middleware::from_fn(log_request))
        .with_state(state)
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let start = Instant::now();
    let res = next.run(req).await;
    log::info!(
        "method={method} path={path} status={} ms={:.1}",
        res.status().as_u16(),
        start.elapsed().as_secs_f64() * 1e3
    );
    res
}

type St = State<Arc<AppState>>;

fn collection(state: &AppState, id: &str) -> ApiResult<Arc<Collection>> {
    state.get(id).ok_or_else(|| ApiError::not_found("collection", id))
}

fn zone_image_url(collection: &str, zone_id: &str) -> String {
    format!(
        "/api/v1/collections/{}/zones/{}/image",
        utf8_percent_encode(collection, NON_ALPHANUMERIC),
        utf8_percent_encode(zone_id, NON_ALPHANUMERIC)
    )
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

// Collections

#[derive(Deserialize)]
struct CreateCollection {
    collection_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct CollectionView {
    pub collection_id: String,
    pub books: usize,
    pub pages: usize,
    pub zones: usize,
    pub events: usize,
    pub classes: usize,
    pub prepared: bool,
    pub queued: usize,
}

fn collection_view(c: &Collection) -> CollectionView {
    let e = c.read();
    CollectionView {
        collection_id: c.id.clone(),
        books: e.books().count(),
        pages: e.pages().count(),
        zones: e.zones().count(),
        events: e.events().len(),
        classes: e.class_states().count(),
        prepared: e.codebook().is_some(),
        queued: e.queue().len(),
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

async fn create_collection(State(s): St, body: Result<Json<CreateCollection>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    if !valid_id(&body.collection_id) {
        return Err(ApiError::validation("collection_id must match [A-Za-z0-9_-]{1,128}"));
    }
    let (c, created) = s.create(&body.collection_id)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(collection_view(&c))).into_response())
}

async fn list_collections(State(s): St) -> Json<Vec<CollectionView>> {
    Json(s.all().iter().map(|c| collection_view(c)).collect())
}

// Pages and zones

#[derive(Deserialize)]
struct UploadQuery {
    page_id: String,
    #[serde(default)]
    book_id: Option<String>,
    /// `page` (segment into lines and words) or `word` (one pre-cut word).
    #[serde(default)]
    kind: Option<String>,
}

#[derive(Serialize, Deserialize)]
pub struct BandView {
    pub top: usize,
    pub bottom: usize,
}

#[derive(Serialize, Deserialize)]
pub struct ZoneView {
    pub zone_id: String,
    pub line: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub source: ZoneSource,
    pub image_url: String,
}

#[derive(Serialize, Deserialize)]
pub struct PageView {
    pub page_id: String,
    pub book_id: String,
    pub width: usize,
    pub height: usize,
    pub bands: Vec<BandView>,
    pub zones: Vec<ZoneView>,
}

fn page_view(cid: &str, e: &Engine, page_id: &str) -> ApiResult<PageView> {
    let p = e.page(page_id).ok_or_else(|| ApiError::not_found("page", page_id))?;
    Ok(PageView {
        page_id: p.page_id.clone(),
        book_id: p.book_id.clone(),
        width: p.mask.width(),
        height: p.mask.height(),
        bands: p.bands.iter().map(|b| BandView { top: b.top, bottom: b.bottom }).collect(),
        zones: p
            .zone_ids
            .iter()
            .filter_map(|z| e.zone(z))
            .map(|z| ZoneView {
                zone_id: z.zone.zone_id.clone(),
                line: z.zone.line,
                x: z.zone.x,
                y: z.zone.y,
                w: z.zone.w,
                h: z.zone.h,
                source: z.zone.source,
                image_url: zone_image_url(cid, &z.zone.zone_id),
            })
            .collect(),
    })
}

async fn upload_page(
    State(s): St,
    Path(cid): Path<String>,
    q: Result<Query<UploadQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let c = collection(&s, &cid)?;
    if c.read().page(&q.page_id).is_some() {
        return Ok((StatusCode::OK, Json(page_view(&cid, &c.read(), &q.page_id)?)).into_response());
    }
    let word = match q.kind.as_deref() {
        None | Some("page") => false,
        Some("word") => true,
        Some(k) => return Err(ApiError::validation(format!("unknown page kind {k:?}"))),
    };
    let view = blocking(move || {
        let gray = decode_gray(&body)?;
        let book = q.book_id.unwrap_or_else(|| "default".into());
        let mut e = c.write();
        if e.page(&q.page_id).is_none() {
            if word {
                let mask = BinaryImage::from_fn(gray.width(), gray.height(), |x, y| gray.get(x, y) < 128);
                e.add_word_page(&book, &q.page_id, mask)?;
            } else {
                e.ingest_page(&book, &q.page_id, gray)?;
            }
        }
        page_view(&cid, &e, &q.page_id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct PageSummary {
    pub page_id: String,
    pub book_id: String,
    pub zones: usize,
}

async fn list_pages(State(s): St, Path(cid): Path<String>) -> ApiResult<Json<Vec<PageSummary>>> {
    let c = collection(&s, &cid)?;
    let e = c.read();
    let mut out: Vec<PageSummary> = e
        .pages()
        .map(|p| PageSummary {
            page_id: p.page_id.clone(),
            book_id: p.book_id.clone(),
            zones: p.zone_ids.len(),
        })
        .collect();
    out.sort_by(|a, b| (&a.book_id, &a.page_id).cmp(&(&b.book_id, &b.page_id)));
    Ok(Json(out))
}

async fn get_page(State(s): St, Path((cid, pid)): Path<(String, String)>) -> ApiResult<Json<PageView>> {
    let c = collection(&s, &cid)?;
    let e = c.read();
    Ok(Json(page_view(&cid, &e, &pid)?))
}

#[derive(Deserialize)]
struct AddZone {
    line: usize,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

async fn add_zone(
    State(s): St,
    Path((cid, pid)): Path<(String, String)>,
    body: Result<Json<AddZone>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(z) = body?;
    let c = collection(&s, &cid)?;
    let zone_id = c.write().add_external_zone(&pid, z.line, Rect::new(z.x, z.y, z.w, z.h))?;
    let url = zone_image_url(&cid, &zone_id);
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "zone_id": zone_id, "image_url": url }))).into_response())
}

async fn zone_image(State(s): St, Path((cid, zid)): Path<(String, String)>) -> ApiResult<Response> {
    let c = collection(&s, &cid)?;
    let gray = {
        let e = c.read();
        let img = e.zone_image(&zid).ok_or_else(|| ApiError::not_found("zone", &zid))?;
        e.zone_gray(&zid).unwrap_or_else(|| img.to_gray())
    };
    let png = encode_png(&gray)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Serialize, Deserialize)]
pub struct PrepareView {
    pub codebook_k: usize,
    pub features: usize,
}

async fn prepare(State(s): St, Path(cid): Path<String>) -> ApiResult<Json<PrepareView>> {
    let c = collection(&s, &cid)?;
    blocking(move || {
        let mut e = c.write();
        e.prepare()?;
        Ok(Json(PrepareView {
            codebook_k: e.codebook().map_or(0, |cb| cb.k),
            features: e.features().len(),
        }))
    })
    .await
}

// Classes, hit lists and prospects

async fn list_classes(State(s): St, Path(cid): Path<String>) -> ApiResult<Response> {
    let c = collection(&s, &cid)?;
    let classes = c.read().classes();
    Ok(Json(classes).into_response())
}

#[derive(Deserialize)]
struct HitlistQuery {
    limit: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct HitEntryView {
    pub zone_id: String,
    pub score: f64,
    pub labeled: bool,
    pub image_url: String,
}

#[derive(Serialize, Deserialize)]
pub struct HitListView {
    pub class_key: String,
    pub label: String,
    pub model_version: u64,
    pub generated_at: i64,
    pub entries: Vec<HitEntryView>,
    pub curves: Option<UncertaintyCurves>,
}

async fn hitlist(
    State(s): St,
    Path((cid, key)): Path<(String, String)>,
    q: Result<Query<HitlistQuery>, QueryRejection>,
) -> ApiResult<Json<HitListView>> {
    let Query(q) = q?;
    if q.limit == Some(0) {
        return Err(ApiError::validation("limit must be positive"));
    }
    let c = collection(&s, &cid)?;
    let e = c.read();
    let h = e.hitlist(&key)?;
    let class = e.class(&key).expect("class with a hit list");
    Ok(Json(HitListView {
        class_key: h.class_key.clone(),
        label: class.label.clone(),
        model_version: h.model_version,
        generated_at: h.generated_at,
        entries: h
            .entries
            .iter()
            .take(q.limit.unwrap_or(usize::MAX))
            .map(|x| HitEntryView {
                zone_id: x.zone_id.clone(),
                score: x.score,
                labeled: x.already_labeled,
                image_url: zone_image_url(&cid, &x.zone_id),
            })
            .collect(),
        curves: class.curves.clone(),
    }))
}

#[derive(Deserialize)]
struct ProspectQuery {
    top: Option<usize>,
}

async fn prospects(
    State(s): St,
    Path(cid): Path<String>,
    q: Result<Query<ProspectQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let c = collection(&s, &cid)?;
    let list = c.read().prospects(s.clock.now(), q.top.unwrap_or(10));
    Ok(Json(list).into_response())
}

#[derive(Deserialize)]
struct HarvestQuery {
    bucket: Option<u64>,
    book: Option<String>,
    format: Option<String>,
}

async fn harvest(
    State(s): St,
    Path(cid): Path<String>,
    q: Result<Query<HarvestQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let c = collection(&s, &cid)?;
    let curve = c.read().harvest(q.book.as_deref(), q.bucket.unwrap_or(60))?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(curve).into_response()),
        Some("csv") => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], curve.to_csv()).into_response()),
        Some(f) => Err(ApiError::validation(format!("unknown format {f:?}"))),
    }
}

async fn cycle(State(s): St, Path(cid): Path<String>) -> ApiResult<Response> {
    let c = collection(&s, &cid)?;
    let report = c.run_cycle(s.clock.now(), true).await?;
    Ok(Json(report).into_response())
}

// Labels

#[derive(Deserialize)]
struct LabelsRequest {
    collection_id: String,
    #[serde(flatten)]
    batch: LabelBatch,
    /// Versions of the hit lists the user reviewed; a mismatch means the
    /// client saw a stale list.
    #[serde(default)]
    model_versions: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
pub struct LabelsResponse {
    pub batch_id: String,
    pub accepted: usize,
    pub event_ids: Vec<u64>,
    pub rejected: Vec<RejectedLabel>,
    pub requests: Vec<RecomputeRequest>,
    pub duplicate: bool,
}

async fn submit_labels(State(s): St, body: Result<Json<LabelsRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let c = collection(&s, &req.collection_id)?;
    let receipt = {
        let mut e = c.write();
        let known = req.batch.batch_id.as_deref().is_some_and(|b| e.receipt(b).is_some());
        if !known {
            for (key, &seen) in &req.model_versions {
                let current = e.class(key).map_or(0, |c| c.model_version());
                if current != seen {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "stale_model",
                        format!("class {key} is at model version {current}, batch was made against {seen}"),
                    ));
                }
            }
        }
        e.submit_labels(req.batch, s.clock.now())?
    };
    let out = LabelsResponse {
        batch_id: receipt.batch_id,
        accepted: receipt.accepted.len(),
        event_ids: receipt.accepted,
        rejected: receipt.rejected,
        requests: receipt.requests,
        duplicate: receipt.duplicate,
    };
    Ok((StatusCode::ACCEPTED, Json(out)).into_response())
}

// Exports

#[derive(Deserialize)]
struct ExportRequest {
    collection_id: String,
    kind: ExportKind,
    #[serde(default)]
    page_id: Option<String>,
    #[serde(default)]
    book_id: Option<String>,
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    floor_offset: f64,
    #[serde(default)]
    ttl_ms: Option<i64>,
    /// Retrying with the same id returns the first response.
    #[serde(default)]
    request_id: Option<String>,
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ExportResponse {
    pub export: ExportRecord,
    pub download: DownloadToken,
    pub url: String,
}

async fn create_export(State(s): St, body: Result<Json<ExportRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let c = collection(&s, &req.collection_id)?;
    if !req.floor_offset.is_finite() {
        return Err(ApiError::validation("floor_offset must be finite"));
    }
    if let Some(r) = req.request_id.as_ref().and_then(|id| c.export_requests().get(id).cloned()) {
        return Ok((StatusCode::OK, Json(r)).into_response());
    }
    let filter = WordlistFilter {
        book_id: req.book_id,
        classes: req.classes.map(|v| v.into_iter().collect()),
    };
    let now = s.clock.now();
    let ttl = req.ttl_ms.unwrap_or(s.config.download_ttl_ms);
    let out = {
        let e = c.read();
        let mut x = c.exports.lock().unwrap_or_else(|e| e.into_inner());
        let export = x.create(&e, req.kind, req.page_id.as_deref(), &filter, req.floor_offset, now)?.clone();
        let download = x.issue_download(&export.export_id, ttl, now)?;
        ExportResponse {
            url: format!("/api/v1/downloads/{}", download.token),
            export,
            download,
        }
    };
    if let Some(id) = req.request_id {
        c.export_requests().insert(id, out.clone());
    }
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn download(State(s): St, Path(token): Path<String>) -> ApiResult<Response> {
    let mut found = None;
    let mut last_err = wordharvest::Error::UnknownToken;
    for c in s.all() {
        let x = c.exports.lock().unwrap_or_else(|e| e.into_inner());
        match x.redeem(&token, s.clock.now()) {
            Ok(r) => {
                found = Some(r.clone());
                break;
            }
            Err(wordharvest::Error::UnknownToken) => {}
            Err(e) => {
                last_err = e;
                break;
            }
        }
    }
    let r = found.ok_or(last_err)?;
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, r.kind.media_type())
        .header(header::CONTENT_DISPOSITION, format!("attachment; filename=\"{}\"", r.filename))
        .header("x-content-sha256", r.sha256)
        .body(Body::from(r.bytes))
        .expect("valid response"))
}
