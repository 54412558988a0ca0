//! JSON-over-HTTP front of [`osb_core::clickme::GameService`].
//!
//! Clients create a session with `POST /session` and send the returned token
//! as `Authorization: Bearer <token>` on the round endpoints.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};

use osb_core::attribution::ImportanceMap;
use osb_core::clickme::{
    aggregate_category_map, reliability_analysis, AnnotatedMap, GameService, ReliabilityParams, ReliabilityReport,
    Round, RoundStatus, SessionInfo, StrokeBatch, StrokeOutcome,
};
use osb_core::Error;

pub struct AppState {
    pub game: GameService,
    pub reliability: ReliabilityParams,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::State(_) => StatusCode::CONFLICT,
            Error::Insufficient(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::InvalidArgument(_) | Error::Shape(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPayload {
    pub round_id: u64,
    pub image_id: String,
    pub label: String,
    /// Base64 of a binary (P5) portable graymap.
    pub image_pgm: String,
    pub width: usize,
    pub height: usize,
    pub duration_ms: u64,
    pub display_budget_ms: u64,
    pub brush_size: usize,
    pub status: RoundStatus,
    pub started_at: Option<u64>,
    pub deadline: Option<u64>,
    pub revealed: usize,
    pub score: u64,
}

fn payload(game: &GameService, r: &Round) -> Result<RoundPayload, ApiError> {
    let mut pgm = Vec::new();
    r.display.write_pgm(&mut pgm, 255)?;
    let c = game.config();
    Ok(RoundPayload {
        round_id: r.round_id,
        image_id: r.image_id.clone(),
        label: r.category.clone(),
        image_pgm: base64::engine::general_purpose::STANDARD.encode(pgm),
        width: r.size(),
        height: r.size(),
        duration_ms: c.round_duration_ms,
        display_budget_ms: c.display_budget_ms,
        brush_size: c.brush_size,
        status: r.status,
        started_at: r.started_at,
        deadline: r.deadline,
        revealed: r.revealed(),
        score: r.score,
    })
}

fn token(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or_else(|| ApiError(StatusCode::UNAUTHORIZED, "missing bearer session token".into()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
pub struct NewSession {
    #[serde(default)]
    pub participant_id: Option<String>,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Option<Json<NewSession>>) -> ApiResult<SessionInfo> {
    let req = body.map(|b| b.0).unwrap_or_default();
    Ok(Json(st.game.create_session(req.participant_id)))
}

async fn next_round(State(st): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<RoundPayload> {
    let tok = token(&headers)?;
    blocking(move || {
        let r = st.game.start_round(&tok).map_err(|e| match e {
            Error::Insufficient(m) => ApiError(StatusCode::GONE, m),
            e => e.into(),
        })?;
        payload(&st.game, &r)
    })
    .await
    .map(Json)
}

async fn strokes(
    State(st): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<u64>,
    Json(batch): Json<StrokeBatch>,
) -> ApiResult<StrokeOutcome> {
    let tok = token(&headers)?;
    blocking(move || Ok(st.game.apply_strokes(&tok, id, &batch)?)).await.map(Json)
}

async fn skip(State(st): State<Arc<AppState>>, headers: HeaderMap, Path(id): Path<u64>) -> ApiResult<RoundPayload> {
    let tok = token(&headers)?;
    blocking(move || {
        let r = st.game.skip(&tok, id)?;
        payload(&st.game, &r)
    })
    .await
    .map(Json)
}

async fn category_map(State(st): State<Arc<AppState>>, Path(category): Path<String>) -> ApiResult<ImportanceMap> {
    blocking(move || {
        let c = st.game.config();
        Ok(aggregate_category_map(st.game.store(), &category, c.blur_size, c.blur_sigma)?)
    })
    .await
    .map(Json)
}

#[derive(Debug, Default, Deserialize)]
pub struct ReliabilityQuery {
    pub n_pairs: Option<usize>,
    pub seed: Option<u64>,
}

/// Reliability report over every stored map.
pub fn store_reliability(game: &GameService, params: &ReliabilityParams) -> osb_core::Result<ReliabilityReport> {
    let store = game.store();
    let maps = store
        .records()?
        .iter()
        .map(|r| {
            Ok(AnnotatedMap {
                image_id: r.image_id.clone(),
                participant_id: r.participant_id.clone(),
                map: store.load_map(r)?,
            })
        })
        .collect::<osb_core::Result<Vec<_>>>()?;
    reliability_analysis(&maps, params)
}

async fn reliability(State(st): State<Arc<AppState>>, Query(q): Query<ReliabilityQuery>) -> ApiResult<ReliabilityReport> {
    blocking(move || {
        let mut params = st.reliability.clone();
        if let Some(n) = q.n_pairs {
            params.n_pairs = n;
        }
        if let Some(s) = q.seed {
            params.seed = s;
        }
        Ok(store_reliability(&st.game, &params)?)
    })
    .await
    .map(Json)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/round", get(next_round))
        .route("/round/{id}/strokes", post(strokes))
        .route("/round/{id}/skip", post(skip))
        .route("/maps/{category}", get(category_map))
        .route("/reliability", get(reliability))
        .with_state(state)
}

/// Reads `<dir>/<category>/<image>.pgm`, resizing every drawing to `size`.
pub fn load_pool(dir: &std::path::Path, size: usize) -> osb_core::Result<Vec<osb_core::clickme::PoolImage>> {
    let mut out = Vec::new();
    let mut cats: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    cats.sort_by_key(|e| e.file_name());
    for cat in cats {
        let category = cat.file_name().to_string_lossy().into_owned();
        let mut files: Vec<_> = std::fs::read_dir(cat.path())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        files.sort();
        for f in files {
            let img = osb_core::Image::load_pgm(&f)?;
            let img = if img.width() == size && img.height() == size { img } else { img.resize_bilinear(size, size) };
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            out.push(osb_core::clickme::PoolImage {
                image_id: format!("{category}/{stem}"),
                category: category.clone(),
                image: Arc::new(img),
            });
        }
    }
    Ok(out)
}
