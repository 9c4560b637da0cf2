//! HTTP API over a [`Store`]. Handlers are stateless; everything they
//! return can be rebuilt from the store directory alone.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/api/slides` | slide records |
//! | GET | `/api/slides/{id}` | record plus pyramid |
//! | GET | `/api/slides/{id}/tiles/{level}/{tx}_{ty}` | PNG or JPEG bytes |
//! | GET | `/api/patches/{key}/annotations[?version=n]` | document |
//! | PUT | `/api/patches/{key}/annotations` | save, body carries base version |
//! | POST | `/api/patches/{key}/presegment` | unsaved model document |
//! | POST | `/api/patches/{key}/score[?tau=t]` | score report |
//! | POST | `/api/predictions` | upload a prediction file, returns its id |
//! | POST | `/api/evaluate` | evaluation report |
//!
//! Errors are `{"code": ..., "message": ...}` with `code` one of
//! `not_found`, `conflict`, `invalid_input`, `empty_dataset`, `internal`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baseline::{segment_nuclei, BaselineParams};
use crate::domain::{EvaluationConfig, PatchRegion, SlideRecord};
use crate::error::{Error, ErrorKind};
use crate::formats::PredictionFile;
use crate::pipeline;
use crate::store::{AnnotationDocument, Store, TilePyramid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: ErrorKind,
    pub message: String,
}

impl ApiError {
    fn invalid(message: impl Into<String>) -> Self {
        ApiError {
            status: 422,
            code: ErrorKind::InvalidInput,
            message: message.into(),
        }
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::InvalidInput | ErrorKind::EmptyDataset => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl<E: Into<Error>> From<E> for ApiError {
    fn from(e: E) -> Self {
        let e = e.into();
        let kind = e.kind();
        ApiError {
            status: status_of(kind).as_u16(),
            code: kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct AppState {
    store: Store,
    baseline: BaselineParams,
}

type Shared = State<Arc<AppState>>;

pub fn router(store: Store, baseline: BaselineParams) -> Router {
    let state = Arc::new(AppState { store, baseline });
    Router::new()
        .route("/api/slides", get(list_slides))
        .route("/api/slides/{id}", get(get_slide))
        .route("/api/slides/{id}/tiles/{level}/{tile}", get(get_tile))
        .route(
            "/api/patches/{key}/annotations",
            get(get_annotations).put(put_annotations),
        )
        .route("/api/patches/{key}/presegment", post(presegment))
        .route("/api/patches/{key}/score", post(score))
        .route("/api/predictions", post(upload_predictions))
        .route("/api/evaluate", post(evaluate))
        .with_state(state)
}

pub async fn serve(store: Store, baseline: BaselineParams, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store, baseline)).await
}

/// Runs store and compute work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: 500,
        code: ErrorKind::Internal,
        message: e.to_string(),
    })?
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    if body.is_empty() {
        return Err(ApiError::invalid("request body is empty"));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

fn query_param<T: std::str::FromStr>(query: &Option<String>, name: &str) -> ApiResult<Option<T>> {
    let Some(q) = query else { return Ok(None) };
    for pair in q.split('&') {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        if k == name {
            return v
                .parse()
                .map(Some)
                .map_err(|_| ApiError::invalid(format!("query parameter {name}={v:?}")));
        }
    }
    Ok(None)
}

fn patch_of(key: &str) -> ApiResult<PatchRegion> {
    PatchRegion::from_key(key).map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideView {
    #[serde(flatten)]
    pub record: SlideRecord,
    pub pyramid: TilePyramid,
}

async fn list_slides(State(st): Shared) -> ApiResult<Json<Vec<SlideRecord>>> {
    blocking(move || Ok(Json(st.store.slides()?))).await
}

async fn get_slide(State(st): Shared, Path(id): Path<String>) -> ApiResult<Json<SlideView>> {
    blocking(move || {
        Ok(Json(SlideView {
            record: st.store.slide(&id)?,
            pyramid: st.store.pyramid(&id)?,
        }))
    })
    .await
}

async fn get_tile(
    State(st): Shared,
    Path((id, level, tile)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let not_found = || ApiError {
        status: 404,
        code: ErrorKind::NotFound,
        message: format!("tile {id}/{level}/{tile} not found"),
    };
    let stem = tile.split('.').next().unwrap_or_default();
    let (tx, ty) = stem.split_once('_').ok_or_else(not_found)?;
    let (Ok(level), Ok(tx), Ok(ty)) = (level.parse(), tx.parse(), ty.parse()) else {
        return Err(not_found());
    };
    let tile = blocking(move || Ok(st.store.get_tile(&id, level, tx, ty)?)).await?;
    Ok((
        [
            (header::CONTENT_TYPE, tile.format.content_type()),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        tile.bytes,
    )
        .into_response())
}

async fn get_annotations(
    State(st): Shared,
    Path(key): Path<String>,
    RawQuery(query): RawQuery,
) -> ApiResult<Json<AnnotationDocument>> {
    let version = query_param::<u64>(&query, "version")?;
    patch_of(&key)?;
    blocking(move || Ok(Json(st.store.load_document(&key, version)?))).await
}

async fn put_annotations(
    State(st): Shared,
    Path(key): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AnnotationDocument>> {
    let patch = patch_of(&key)?;
    let doc: AnnotationDocument = parse_body(&body)?;
    if doc.patch != patch {
        return Err(ApiError::invalid(format!(
            "document patch {} does not match {key}",
            doc.key()
        )));
    }
    blocking(move || {
        let version = st.store.save_document(&doc)?;
        Ok(Json(st.store.load_document(&key, Some(version))?))
    })
    .await
}

/// `predictor` is `"baseline"` or the id of an uploaded prediction file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresegmentRequest {
    pub predictor: String,
    #[serde(default)]
    pub params: Option<BaselineParams>,
}

async fn presegment(
    State(st): Shared,
    Path(key): Path<String>,
    body: Bytes,
) -> ApiResult<Json<AnnotationDocument>> {
    let patch = patch_of(&key)?;
    let req: PresegmentRequest = parse_body(&body)?;
    blocking(move || {
        let (preds, author) = if req.predictor == "baseline" {
            let params = req.params.unwrap_or_else(|| st.baseline.clone());
            params.validate()?;
            let pixels = st.store.read_region(&patch)?;
            (segment_nuclei(&pixels, &params), "baseline".to_string())
        } else {
            let file = st.store.prediction_file(&req.predictor)?;
            if file.patch != patch {
                return Err(ApiError::invalid(format!(
                    "prediction file is for patch {}, not {key}",
                    file.patch.key()
                )));
            }
            (file.predictions()?, file.model)
        };
        Ok(Json(pipeline::presegment(&patch, &preds, &author)))
    })
    .await
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    /// Score an uploaded prediction file instead of the latest annotations.
    #[serde(default)]
    pub prediction_id: Option<String>,
}

async fn score(
    State(st): Shared,
    Path(key): Path<String>,
    RawQuery(query): RawQuery,
    body: Bytes,
) -> ApiResult<Json<crate::scoring::ScoreReport>> {
    let patch = patch_of(&key)?;
    let tau = query_param::<f64>(&query, "tau")?;
    let req: ScoreRequest = if body.is_empty() {
        ScoreRequest::default()
    } else {
        parse_body(&body)?
    };
    blocking(move || {
        let known = st.store.slide(&patch.slide_id).ok().map(|s| s.stain_kind);
        let report = match req.prediction_id {
            Some(id) => pipeline::score_predictions(&st.store.prediction_file(&id)?, known, tau)?,
            None => pipeline::score_document(&st.store.load_document(&key, None)?, known, tau)?,
        };
        Ok(Json(report))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UploadResponse {
    pub id: String,
    pub instances: usize,
}

async fn upload_predictions(State(st): Shared, body: Bytes) -> ApiResult<(StatusCode, Json<UploadResponse>)> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::invalid("body is not UTF-8"))?;
    let file = PredictionFile::from_json(text)?;
    blocking(move || {
        let id = st.store.put_prediction_file(&file)?;
        Ok((
            StatusCode::CREATED,
            Json(UploadResponse {
                id,
                instances: file.instances.len(),
            }),
        ))
    })
    .await
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    /// Uploaded prediction file ids.
    pub predictions: Vec<String>,
    /// Patch keys whose latest annotation documents are the ground truth.
    pub ground_truth: Vec<String>,
    #[serde(default)]
    pub config: Option<EvaluationConfig>,
    #[serde(default)]
    pub title: Option<String>,
}

async fn evaluate(State(st): Shared, body: Bytes) -> ApiResult<Json<crate::eval::EvalReport>> {
    let req: EvaluateRequest = parse_body(&body)?;
    blocking(move || {
        let preds = req
            .predictions
            .iter()
            .map(|id| st.store.prediction_file(id))
            .collect::<Result<Vec<_>, _>>()?;
        let gts = req
            .ground_truth
            .iter()
            .map(|k| st.store.load_document(k, None))
            .collect::<Result<Vec<_>, _>>()?;
        let config = req.config.unwrap_or_default();
        Ok(Json(pipeline::evaluate(&preds, &gts, &config, req.title)?))
    })
    .await
}
