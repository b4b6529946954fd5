//! Request and response types with the pure functions behind each
//! endpoint. The CLI calls the same functions, so both report identical
//! numbers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use admgeo_core::analytics::{
    self, AggregateReport, CombinationTable, DensityRaster, GroupKey, HistogramBin, HistogramDimension, Timeline,
};
use admgeo_core::geo;
use admgeo_core::index::{query_trips_by_metric, Comparator};
use admgeo_core::metrics::MetricKind;
use admgeo_core::{
    ActionId, BBox, CancelToken, Dataset, DatasetManifest, FrameId, FrameRef, LatLon, ModelId, QueryExpr, Selection,
    TripAggregate,
};

use crate::error::ApiError;

pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const MAX_PAGE_SIZE: usize = 1000;
pub const DEFAULT_THUMBNAILS: usize = 20;
pub const DEFAULT_RASTER_SIZE: usize = 256;
pub const MAX_RASTER_CELLS: usize = 4_000_000;

/// Frame selection fields shared by most requests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<QueryExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trip_ids: Option<Vec<String>>,
}

impl SelectionFields {
    pub fn selection(&self) -> Selection {
        Selection {
            expr: self.expr.clone(),
            trip_ids: self.trip_ids.clone(),
        }
    }
}

fn select(d: &Dataset, s: &SelectionFields) -> Result<Vec<FrameId>, ApiError> {
    Ok(d.select(&s.selection())?)
}

fn resolve_models(d: &Dataset, models: Option<&Vec<ModelId>>) -> Result<Vec<ModelId>, ApiError> {
    let known = d.store().models();
    match models {
        None => Ok(known.to_vec()),
        Some(ms) => {
            if let Some(m) = ms.iter().find(|m| !known.contains(m)) {
                return Err(ApiError::validation(format!("unknown model {m}")));
            }
            Ok(ms.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub trips: u64,
    pub frames: u64,
}

pub fn health(d: &Dataset) -> Health {
    let c = &d.store().manifest().counts;
    Health {
        status: "ok".into(),
        trips: c.trips,
        frames: c.frames,
    }
}

pub fn manifest(d: &Dataset) -> DatasetManifest {
    d.store().manifest().clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub frames: u64,
    pub accuracy: Option<f64>,
    pub mean_perplexity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub manifest: DatasetManifest,
    pub models: BTreeMap<ModelId, ModelStats>,
}

/// Manifest plus global per-model accuracy and mean perplexity over every
/// frame.
pub fn stats(d: &Dataset) -> Stats {
    let mut per_model = BTreeMap::new();
    for m in d.store().models() {
        let (mut frames, mut correct, mut ppl) = (0u64, 0u64, 0.0);
        for f in d.store().trips().iter().flat_map(|t| &t.frames) {
            frames += 1;
            correct += u64::from(f.correct.get(m).copied().unwrap_or(false));
            ppl += f.perplexity.get(m).copied().unwrap_or(0.0);
        }
        per_model.insert(
            m.clone(),
            ModelStats {
                frames,
                accuracy: (frames > 0).then(|| correct as f64 / frames as f64),
                mean_perplexity: (frames > 0).then(|| ppl / frames as f64),
            },
        );
    }
    Stats {
        manifest: manifest(d),
        models: per_model,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    #[serde(default)]
    pub page: usize,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub id: FrameId,
    pub trip_id: String,
    pub frame_idx: u32,
    pub timestamp: i64,
    pub location: LatLon,
    pub segment_id: Option<String>,
    pub region_id: Option<String>,
    pub actual: ActionId,
    pub predicted: BTreeMap<ModelId, ActionId>,
    pub correct: BTreeMap<ModelId, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub frames: Vec<FrameSummary>,
}

fn summary(d: &Dataset, id: FrameId) -> FrameSummary {
    let f = d.frame(id);
    FrameSummary {
        id,
        trip_id: f.trip_id.clone(),
        frame_idx: f.frame_idx,
        timestamp: f.timestamp,
        location: f.location,
        segment_id: f.segment_id.clone(),
        region_id: f.region_id.clone(),
        actual: f.actual,
        predicted: f.predicted.clone(),
        correct: f.correct.clone(),
    }
}

/// All matching frame ids, unpaged.
pub fn query_ids(d: &Dataset, s: &SelectionFields) -> Result<Vec<FrameId>, ApiError> {
    select(d, s)
}

pub fn query(d: &Dataset, req: &QueryRequest) -> Result<QueryResponse, ApiError> {
    let page_size = req.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page_size == 0 || page_size > MAX_PAGE_SIZE {
        return Err(ApiError::validation(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    let start = req.page.saturating_mul(page_size).min(ids.len());
    let end = (start + page_size).min(ids.len());
    Ok(QueryResponse {
        total: ids.len(),
        page: req.page,
        page_size,
        frames: ids[start..end].iter().map(|&id| summary(d, id)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripSelectRequest {
    pub models: Vec<ModelId>,
    pub metric: MetricKind,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripEntry {
    pub trip_id: String,
    pub frames: usize,
    pub agg: BTreeMap<ModelId, TripAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSelectResponse {
    pub count: usize,
    pub frames: usize,
    pub trips: Vec<TripEntry>,
}

pub fn select_trips(d: &Dataset, req: &TripSelectRequest) -> Result<TripSelectResponse, ApiError> {
    let ids = query_trips_by_metric(d.store(), &req.models, req.metric, req.comparator, req.threshold)?;
    let trips: Vec<TripEntry> = ids
        .iter()
        .map(|id| {
            let t = d.store().get_trip(id)?;
            Ok(TripEntry {
                trip_id: t.trip_id.clone(),
                frames: t.frames.len(),
                agg: t.agg.clone(),
            })
        })
        .collect::<Result<_, ApiError>>()?;
    Ok(TripSelectResponse {
        count: trips.len(),
        frames: trips.iter().map(|t| t.frames).sum(),
        trips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    pub key: GroupKey,
    #[serde(default)]
    pub models: Option<Vec<ModelId>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResponse {
    pub total: usize,
    pub groups: Vec<AggregateReport>,
}

pub fn aggregate(d: &Dataset, req: &AggregateRequest) -> Result<AggregateResponse, ApiError> {
    let models = resolve_models(d, req.models.as_ref())?;
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    Ok(AggregateResponse {
        total: ids.len(),
        groups: analytics::aggregate_by(d.frames_with_trips(&ids), req.key, &models),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationsRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    #[serde(default)]
    pub models: Option<Vec<ModelId>>,
}

pub fn combinations(d: &Dataset, req: &CombinationsRequest) -> Result<CombinationTable, ApiError> {
    let models = resolve_models(d, req.models.as_ref())?;
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    Ok(analytics::combination_table(d.frames(&ids), &models)?)
}

/// What a histogram counts: each selected frame through its trip, or each
/// trip with at least one selected frame once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramUnit {
    #[default]
    Frames,
    Trips,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    pub dimension: HistogramDimension,
    #[serde(default)]
    pub model: Option<ModelId>,
    #[serde(default)]
    pub unit: HistogramUnit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramResponse {
    pub dimension: HistogramDimension,
    pub unit: HistogramUnit,
    pub bins: Vec<HistogramBin>,
}

pub fn histogram(d: &Dataset, req: &HistogramRequest) -> Result<HistogramResponse, ApiError> {
    if let Some(m) = &req.model {
        resolve_models(d, Some(&vec![m.clone()]))?;
    }
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    let bins = match req.unit {
        HistogramUnit::Frames => {
            analytics::histogram(ids.iter().map(|&id| d.trip_of(id)), req.dimension, req.model.as_ref())?
        }
        HistogramUnit::Trips => {
            let mut seen = BTreeSet::new();
            let trips = ids
                .iter()
                .map(|&id| d.trip_of(id))
                .filter(|t| seen.insert(t.trip_id.as_str()));
            analytics::histogram(trips, req.dimension, req.model.as_ref())?
        }
    };
    Ok(HistogramResponse {
        dimension: req.dimension,
        unit: req.unit,
        bins,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    /// Defaults to the extent of the selected frames.
    #[serde(default)]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub width: Option<usize>,
    #[serde(default)]
    pub height: Option<usize>,
    #[serde(default)]
    pub bandwidth_m: Option<f64>,
}

pub fn density(d: &Dataset, req: &DensityRequest, cancel: &CancelToken) -> Result<DensityRaster, ApiError> {
    let width = req.width.unwrap_or(DEFAULT_RASTER_SIZE);
    let height = req.height.unwrap_or(DEFAULT_RASTER_SIZE);
    if width.saturating_mul(height) > MAX_RASTER_CELLS {
        return Err(ApiError::validation(format!("raster larger than {MAX_RASTER_CELLS} cells")));
    }
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    let points: Vec<LatLon> = d.frames(&ids).map(|f| f.location).collect();
    let bbox = match req.bbox {
        Some(b) => b,
        None => {
            let b = BBox::of_points(&points)
                .ok_or_else(|| ApiError::validation("empty selection and no bbox given"))?;
            // Pad so kernels near the edge are not clipped and a single
            // point still yields a valid box.
            let pad = 0.002;
            BBox {
                min_lat: b.min_lat - pad,
                min_lon: b.min_lon - pad,
                max_lat: b.max_lat + pad,
                max_lon: b.max_lon + pad,
            }
        }
    };
    let bandwidth = req.bandwidth_m.unwrap_or(d.store().config().kde_bandwidth_m);
    Ok(analytics::kde_raster(&points, bbox, width, height, bandwidth, cancel)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThumbnailsRequest {
    #[serde(default)]
    pub expr: Option<QueryExpr>,
    #[serde(default)]
    pub trip_ids: Option<Vec<String>>,
    #[serde(default)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thumbnail {
    pub trip_id: String,
    pub frame_idx: u32,
    pub image_url: String,
    pub location: LatLon,
    pub actual: ActionId,
    pub predicted: BTreeMap<ModelId, ActionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThumbnailsResponse {
    pub population: usize,
    pub skipped_without_image: usize,
    pub thumbnails: Vec<Thumbnail>,
}

pub fn image_url(f: &FrameRef) -> String {
    format!("/frames/{}/{}/image", f.trip_id, f.frame_idx)
}

pub fn thumbnails(d: &Dataset, req: &ThumbnailsRequest, cancel: &CancelToken) -> Result<ThumbnailsResponse, ApiError> {
    let k = req.k.unwrap_or(DEFAULT_THUMBNAILS);
    let ids = select(
        d,
        &SelectionFields {
            expr: req.expr.clone(),
            trip_ids: req.trip_ids.clone(),
        },
    )?;
    let mut candidates = Vec::with_capacity(ids.len());
    for (i, f) in d.frames(&ids).enumerate() {
        if i % 256 == 0 && cancel.is_cancelled() {
            return Err(ApiError::new(crate::error::ErrorCode::Timeout, "operation cancelled"));
        }
        candidates.push((f.frame_ref(), d.load_image(f)));
    }
    let reps = analytics::select_representatives(candidates, k, d.store().config().thumbnail_cap, cancel)?;
    let thumbnails = reps
        .selected
        .iter()
        .map(|r| {
            let id = d.frame_id(&r.trip_id, r.frame_idx).expect("selected from the dataset");
            let f = d.frame(id);
            Thumbnail {
                trip_id: r.trip_id.clone(),
                frame_idx: r.frame_idx,
                image_url: image_url(r),
                location: f.location,
                actual: f.actual,
                predicted: f.predicted.clone(),
            }
        })
        .collect();
    Ok(ThumbnailsResponse {
        population: ids.len(),
        skipped_without_image: reps.skipped_without_image,
        thumbnails,
    })
}

pub fn timeline(d: &Dataset, trip_id: &str) -> Result<Timeline, ApiError> {
    Ok(analytics::trip_timeline(d.store().get_trip(trip_id)?))
}

/// PNG bytes of a frame image.
pub fn frame_image(d: &Dataset, trip_id: &str, frame_idx: u32) -> Result<Vec<u8>, ApiError> {
    let id = d
        .frame_id(trip_id, frame_idx)
        .ok_or_else(|| ApiError::not_found(format!("frame {trip_id}/{frame_idx} not found")))?;
    let path = d
        .image_path(d.frame(id))
        .ok_or_else(|| ApiError::not_found("dataset has no image directory"))?;
    std::fs::read(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::not_found(format!("no image for frame {trip_id}/{frame_idx}")),
        _ => ApiError::internal(format!("{}: {e}", path.display())),
    })
}

pub fn regions_geojson(d: &Dataset) -> Value {
    geo::regions_to_geojson(d.store().regions())
}

pub fn streets_geojson(d: &Dataset) -> Value {
    geo::streets_to_geojson(d.store().segments())
}

#[cfg(test)]
mod tests {
    use super::*;
    use admgeo_core::{Config, Store};

    fn empty() -> Dataset {
        Dataset::from_store(Store::in_memory(Config::default()))
    }

    #[test]
    fn page_size_bounds() {
        let d = empty();
        let req = |n| QueryRequest { page_size: Some(n), ..QueryRequest::default() };
        assert!(query(&d, &req(0)).is_err());
        assert!(query(&d, &req(MAX_PAGE_SIZE + 1)).is_err());
        assert_eq!(query(&d, &req(MAX_PAGE_SIZE)).unwrap().total, 0);
    }

    #[test]
    fn empty_dataset_reports() {
        let d = empty();
        assert_eq!(health(&d).frames, 0);
        assert!(stats(&d).models.is_empty());
        assert!(timeline(&d, "nope").is_err());
        let req = DensityRequest { expr: None, trip_ids: None, bbox: None, width: None, height: None, bandwidth_m: None };
        assert!(density(&d, &req, &CancelToken::new()).is_err());
    }
}
