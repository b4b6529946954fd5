use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

use admgeo_core::{CancelToken, Dataset};

use crate::api;
use crate::error::{ApiError, ErrorCode};

/// Per-request deadline.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub struct AppState {
    pub dataset: Dataset,
    pub timeout: Duration,
}

impl AppState {
    pub fn new(dataset: Dataset) -> Arc<Self> {
        Arc::new(AppState {
            dataset,
            timeout: DEFAULT_TIMEOUT,
        })
    }
}

type Shared = Arc<AppState>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

/// Runs `f` on the blocking pool under the request deadline.
async fn run<T, F>(state: Shared, f: F) -> Response
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Dataset, &CancelToken) -> Result<T, ApiError> + Send + 'static,
{
    let token = CancelToken::with_timeout(state.timeout);
    let worker_token = token.clone();
    let worker_state = state.clone();
    let task = tokio::task::spawn_blocking(move || f(&worker_state.dataset, &worker_token));
    match tokio::time::timeout(state.timeout, task).await {
        Ok(Ok(Ok(v))) => Json(v).into_response(),
        Ok(Ok(Err(e))) => e.into_response(),
        Ok(Err(join)) => ApiError::internal(format!("request handler failed: {join}")).into_response(),
        Err(_) => {
            token.cancel();
            ApiError::new(ErrorCode::Timeout, format!("request exceeded {:?}", state.timeout)).into_response()
        }
    }
}

async fn post_json<Req, T, F>(state: Shared, body: Bytes, f: F) -> Response
where
    Req: DeserializeOwned + Send + 'static,
    T: Serialize + Send + 'static,
    F: FnOnce(&Dataset, &Req, &CancelToken) -> Result<T, ApiError> + Send + 'static,
{
    match parse::<Req>(&body) {
        Ok(req) => run(state, move |d, c| f(d, &req, c)).await,
        Err(e) => e.into_response(),
    }
}

async fn health(State(s): State<Shared>) -> Response {
    Json(api::health(&s.dataset)).into_response()
}

async fn manifest(State(s): State<Shared>) -> Response {
    Json(api::manifest(&s.dataset)).into_response()
}

async fn query(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, |d, r, _| api::query(d, r)).await
}

async fn select_trips(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, |d, r, _| api::select_trips(d, r)).await
}

async fn aggregate(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, |d, r, _| api::aggregate(d, r)).await
}

async fn combinations(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, |d, r, _| api::combinations(d, r)).await
}

async fn histogram(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, |d, r, _| api::histogram(d, r)).await
}

async fn density(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, api::density).await
}

async fn thumbnails(State(s): State<Shared>, body: Bytes) -> Response {
    post_json(s, body, api::thumbnails).await
}

async fn timeline(State(s): State<Shared>, UrlPath(trip_id): UrlPath<String>) -> Response {
    run(s, move |d, _| api::timeline(d, &trip_id)).await
}

async fn frame_image(State(s): State<Shared>, UrlPath((trip_id, idx)): UrlPath<(String, String)>) -> Response {
    let Ok(idx) = idx.parse::<u32>() else {
        return ApiError::validation(format!("frame index {idx:?} is not a number")).into_response();
    };
    match api::frame_image(&s.dataset, &trip_id, idx) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn regions(State(s): State<Shared>) -> Response {
    Json(api::regions_geojson(&s.dataset)).into_response()
}

async fn streets(State(s): State<Shared>) -> Response {
    Json(api::streets_geojson(&s.dataset)).into_response()
}

async fn not_found() -> Response {
    ApiError::not_found("no such endpoint").into_response()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/manifest", get(manifest))
        .route("/query", post(query))
        .route("/trips/select", post(select_trips))
        .route("/aggregate", post(aggregate))
        .route("/combinations", post(combinations))
        .route("/histogram", post(histogram))
        .route("/density", post(density))
        .route("/thumbnails", post(thumbnails))
        .route("/trips/{id}/timeline", get(timeline))
        .route("/frames/{trip_id}/{idx}/image", get(frame_image))
        .route("/geometry/regions", get(regions))
        .route("/geometry/streets", get(streets))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Opens the dataset at `dir` and serves it on `bind` until the process
/// exits. `on_ready` receives the bound address.
pub async fn serve(dir: &Path, bind: &str, on_ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let dataset = Dataset::open(dir).map_err(std::io::Error::other)?;
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    log::info!(
        "serving {} trips / {} frames on {addr}",
        dataset.store().manifest().counts.trips,
        dataset.store().manifest().counts.frames
    );
    on_ready(addr);
    axum::serve(listener, router(AppState::new(dataset))).await
}
