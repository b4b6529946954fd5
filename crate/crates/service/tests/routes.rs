use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use admgeo_core::geo::{parse_regions, parse_streets};
use admgeo_core::ingest::{copy_frame_images, ingest_trips};
use admgeo_core::store::{REGIONS_FILE, SEGMENTS_FILE, TRIPS_FILE};
use admgeo_core::synth::{write_synthetic, SynthSpec};
use admgeo_core::{Config, Dataset, Store};
use admgeo_service::{api, router, AppState};

struct Fixture {
    _dirs: (tempfile::TempDir, tempfile::TempDir),
    data: std::path::PathBuf,
}

fn build(raw: &Path, out: &Path) {
    let spec = SynthSpec { n_trips: 8, frames_per_trip: 30, ..SynthSpec::default() };
    write_synthetic(42, &spec, raw).unwrap();
    let mut store = Store::create(out, Config::default()).unwrap();
    let streets = parse_streets(&std::fs::read_to_string(raw.join(SEGMENTS_FILE)).unwrap()).unwrap();
    let regions = parse_regions(&std::fs::read_to_string(raw.join(REGIONS_FILE)).unwrap()).unwrap();
    store.put_geometry(streets, regions).unwrap();
    let text = std::fs::read(raw.join(TRIPS_FILE)).unwrap();
    ingest_trips(text.as_slice(), &mut store, &Config::default()).unwrap();
    copy_frame_images(raw, out).unwrap();
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let (raw, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        build(raw.path(), out.path());
        let data = out.path().to_path_buf();
        Fixture { _dirs: (raw, out), data }
    })
}

fn app() -> Router {
    router(AppState::new(Dataset::open(&fixture().data).unwrap()))
}

async fn call(app: Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app(), Method::GET, uri, None).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post_json(uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app(), Method::POST, uri, Some(body)).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn snowy() -> Value {
    json!({"pred": {"type": "weather", "values": ["snowy", "rainy"]}})
}

#[tokio::test]
async fn health_and_manifest() {
    let (s, h) = get_json("/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["frames"], 240);
    let (_, m) = get_json("/manifest").await;
    assert_eq!(m["counts"]["trips"], 8);
    assert_eq!(m["models"], json!(["cnn_lstm", "fcn_lstm", "tcnn1"]));
}

#[tokio::test]
async fn query_pages_through_the_selection() {
    let d = Dataset::open(&fixture().data).unwrap();
    let expr: admgeo_core::QueryExpr = serde_json::from_value(snowy()).unwrap();
    let expected = d.query(&expr).unwrap();
    let mut seen = Vec::new();
    for page in 0.. {
        let (s, r) = post_json("/query", json!({"expr": snowy(), "page": page, "page_size": 7})).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(r["total"], expected.len());
        let frames = r["frames"].as_array().unwrap();
        if frames.is_empty() {
            break;
        }
        seen.extend(frames.iter().map(|f| f["id"].as_u64().unwrap() as u32));
    }
    assert_eq!(seen, expected);
}

#[tokio::test]
async fn validation_errors_use_the_envelope() {
    for body in [
        json!({"page_size": 1001}),
        json!({"expr": {"pred": {"type": "weather", "values": []}}}),
        json!({"expr": {"pred": {"type": "on_street", "segment_id": "nowhere"}}}),
        json!({"unexpected": true}),
    ] {
        let (s, r) = post_json("/query", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_eq!(r["error"]["code"], "validation");
        assert!(r["error"]["message"].is_string());
    }
    let (s, b) = call(app(), Method::POST, "/aggregate", Some(json!("not an object"))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let r: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(r["error"]["code"], "validation");
}

#[tokio::test]
async fn not_found_cases() {
    let (s, r) = get_json("/trips/nope/timeline").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(r["error"]["code"], "not_found");
    let (s, _) = get_json("/frames/trip-00000/999/image").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json("/no/such/route").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = get_json("/frames/trip-00000/x/image").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn analytics_endpoints_match_the_api_functions() {
    let d = Dataset::open(&fixture().data).unwrap();
    let (s, agg) = post_json("/aggregate", json!({"expr": snowy(), "key": "region"})).await;
    assert_eq!(s, StatusCode::OK);
    let req: api::AggregateRequest = serde_json::from_value(json!({"expr": snowy(), "key": "region"})).unwrap();
    assert_eq!(agg, serde_json::to_value(api::aggregate(&d, &req).unwrap()).unwrap());

    let (_, table) = post_json("/combinations", json!({"models": ["tcnn1", "fcn_lstm"]})).await;
    assert_eq!(table["total"], 240);
    assert_eq!(table["rows"].as_array().unwrap().len(), 4);
    let sum: u64 = table["rows"].as_array().unwrap().iter().map(|r| r["count"].as_u64().unwrap()).sum();
    assert_eq!(sum, 240);

    let (_, hist) = post_json("/histogram", json!({"dimension": "accuracy_bin", "model": "tcnn1", "unit": "trips"})).await;
    let trips: u64 = hist["bins"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(trips, 8);
    let (s, _) = post_json("/histogram", json!({"dimension": "accuracy_bin"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, sel) = post_json(
        "/trips/select",
        json!({"models": ["tcnn1"], "metric": "accuracy", "comparator": ">=", "threshold": 0.0}),
    )
    .await;
    assert_eq!(sel["count"], 8);
    let (s, _) = post_json(
        "/trips/select",
        json!({"models": ["ghost"], "metric": "accuracy", "comparator": "lt", "threshold": 0.5}),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn density_thumbnails_and_images() {
    let (s, r) = post_json("/density", json!({"width": 40, "height": 30})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["values"].as_array().unwrap().len(), 1200);

    let (s, t) = post_json("/thumbnails", json!({"trip_ids": ["trip-00001", "trip-00002"], "k": 5})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["population"], 60);
    let thumbs = t["thumbnails"].as_array().unwrap();
    assert_eq!(thumbs.len(), 5);
    let url = thumbs[0]["image_url"].as_str().unwrap();
    let (s, png) = call(app(), Method::GET, url, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    let (_, tl) = get_json("/trips/trip-00003/timeline").await;
    assert_eq!(tl["frame_idx"].as_array().unwrap().len(), 30);
    assert_eq!(tl["perplexity"]["tcnn1"].as_array().unwrap().len(), 30);
}

#[tokio::test]
async fn geometry_passthrough() {
    let (_, regions) = get_json("/geometry/regions").await;
    assert_eq!(regions["type"], "FeatureCollection");
    assert_eq!(regions["features"].as_array().unwrap().len(), 4);
    let (_, streets) = get_json("/geometry/streets").await;
    assert!(!streets["features"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn cors_headers_are_sent() {
    let req = Request::builder()
        .uri("/health")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}

#[tokio::test]
async fn expired_deadline_times_out() {
    let state = Arc::new(AppState {
        dataset: Dataset::open(&fixture().data).unwrap(),
        timeout: Duration::ZERO,
    });
    let req = Request::builder()
        .method(Method::POST)
        .uri("/density")
        .body(Body::from(json!({"width": 500, "height": 500}).to_string()))
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::GATEWAY_TIMEOUT);
}
