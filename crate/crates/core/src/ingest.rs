//! Raw trip ingestion. Each raw line carries scores per model; ingest
//! derives predictions, correctness, perplexity, street matches and regions,
//! then stores the trip. A trip with any invalid frame is rejected whole.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::doc::{FrameDoc, Trip};
use crate::geo::{self, LatLon, Region, StreetSegment};
use crate::index::SegmentGrid;
use crate::store::{Store, StoreError};
use crate::types::{ActionId, ModelId, ScoreVector, SpatialConditions};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One frame of a raw trip line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFrame {
    /// Milliseconds since the Unix epoch.
    pub t: i64,
    pub lat: f64,
    pub lon: f64,
    pub speed_mps: f64,
    pub actual: ActionId,
    pub scores: BTreeMap<ModelId, [f64; 4]>,
}

/// One line of the raw trips file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTrip {
    pub trip_id: String,
    pub weather: crate::types::Weather,
    pub time_of_day: crate::types::TimeOfDay,
    pub street_scene: crate::types::StreetScene,
    pub frames: Vec<RawFrame>,
}

/// A rejected trip or line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestIssue {
    /// 1-based line in the raw file.
    pub line: usize,
    pub trip_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub trips: u64,
    pub frames: u64,
    pub unmatched_frames: u64,
    pub errors: Vec<IngestIssue>,
}

/// Street and region geometry prepared for per-frame matching.
pub struct Matcher<'a> {
    segments: &'a [StreetSegment],
    grid: SegmentGrid,
    regions: Vec<&'a Region>,
    radius_m: f64,
}

impl<'a> Matcher<'a> {
    pub fn new(segments: &'a [StreetSegment], regions: &'a [Region], config: &Config) -> Self {
        Matcher {
            segments,
            grid: SegmentGrid::build(segments, config.grid_cell_deg),
            regions: geo::sorted_regions(regions),
            radius_m: config.match_radius_m,
        }
    }

    fn apply(&self, trip: &mut Trip) {
        for frame in &mut trip.frames {
            frame.segment_id = self
                .grid
                .match_point(self.segments, frame.location, self.radius_m)
                .map(|m| m.segment_id);
        }
        let ids = trip
            .frames
            .iter()
            .map(|f| geo::locate_region(&f.location, &self.regions).map(|r| r.region_id.clone()));
        let slices = geo::slices_from_ids(&trip.trip_id, ids);
        for slice in slices {
            for frame in &mut trip.frames[slice.start..slice.end] {
                frame.region_id = slice.region_id.clone();
            }
        }
    }
}

/// Builds a fully derived trip from a raw record.
pub fn derive_trip(raw: &RawTrip, matcher: &Matcher<'_>, config: &Config) -> Result<Trip, String> {
    if raw.trip_id.is_empty() {
        return Err("empty trip_id".into());
    }
    if raw.frames.is_empty() {
        return Err("trip has no frames".into());
    }
    let frames = raw
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameDoc {
            trip_id: raw.trip_id.clone(),
            frame_idx: i as u32,
            timestamp: f.t,
            location: LatLon::new(f.lat, f.lon),
            speed: f.speed_mps,
            actual: f.actual,
            scores: f.scores.iter().map(|(m, s)| (m.clone(), ScoreVector(*s))).collect(),
            predicted: BTreeMap::new(),
            correct: BTreeMap::new(),
            perplexity: BTreeMap::new(),
            segment_id: None,
            region_id: None,
            image: FrameDoc::image_path(&raw.trip_id, i as u32),
        })
        .collect();
    let mut trip = Trip {
        trip_id: raw.trip_id.clone(),
        conditions: SpatialConditions {
            time_of_day: raw.time_of_day,
            weather: raw.weather,
            street_scene: raw.street_scene,
        },
        frames,
        agg: BTreeMap::new(),
    };
    trip.derive_metrics(config.perplexity_window)
        .map_err(|e| e.to_string())?;
    matcher.apply(&mut trip);
    Ok(trip)
}

/// Raw record of a stored trip; the inverse of [`derive_trip`] on the
/// input fields.
pub fn export_raw(trip: &Trip) -> RawTrip {
    RawTrip {
        trip_id: trip.trip_id.clone(),
        weather: trip.conditions.weather,
        time_of_day: trip.conditions.time_of_day,
        street_scene: trip.conditions.street_scene,
        frames: trip
            .frames
            .iter()
            .map(|f| RawFrame {
                t: f.timestamp,
                lat: f.location.lat,
                lon: f.location.lon,
                speed_mps: f.speed,
                actual: f.actual,
                scores: f.scores.iter().map(|(m, s)| (m.clone(), s.0)).collect(),
            })
            .collect(),
    }
}

/// Ingests every line of a raw trips file into `store`, whose geometry
/// must already be loaded. Lines are parsed and derived in parallel and
/// stored in file order.
pub fn ingest_trips(
    raw: impl BufRead,
    store: &mut Store,
    config: &Config,
) -> Result<IngestReport, IngestError> {
    let mut lines = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: "<raw trips>".into(),
            source,
        })?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }

    let segments = store.segments().to_vec();
    let regions = store.regions().to_vec();
    let matcher = Matcher::new(&segments, &regions, config);
    let derived: Vec<(usize, Result<Trip, IngestIssue>)> = lines
        .par_iter()
        .map(|(line, text)| {
            let issue = |trip_id: Option<String>, message: String| IngestIssue {
                line: *line,
                trip_id,
                message,
            };
            let result = match serde_json::from_str::<RawTrip>(text) {
                Err(e) => Err(issue(None, format!("malformed line: {e}"))),
                Ok(raw) => derive_trip(&raw, &matcher, config)
                    .map_err(|m| issue(Some(raw.trip_id.clone()), m)),
            };
            (*line, result)
        })
        .collect();

    let mut report = IngestReport::default();
    for (line, result) in derived {
        match result {
            Err(issue) => report.errors.push(issue),
            Ok(trip) => {
                let trip_id = trip.trip_id.clone();
                let frames = trip.frames.len() as u64;
                let unmatched = trip.frames.iter().filter(|f| f.segment_id.is_none()).count() as u64;
                match store.put_trip(trip) {
                    Ok(()) => {
                        report.trips += 1;
                        report.frames += frames;
                        report.unmatched_frames += unmatched;
                    }
                    Err(e @ (StoreError::Conflict(_) | StoreError::Invalid(_))) => {
                        report.errors.push(IngestIssue {
                            line,
                            trip_id: Some(trip_id),
                            message: e.to_string(),
                        })
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(report)
}

/// Copies `frames/` from a raw directory into a dataset directory.
pub fn copy_frame_images(raw_dir: &Path, dataset_dir: &Path) -> Result<u64, IngestError> {
    let src = raw_dir.join("frames");
    if !src.is_dir() {
        return Ok(0);
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    let mut copied = 0;
    let mut trip_dirs: Vec<_> = fs::read_dir(&src)
        .map_err(io(&src))?
        .collect::<Result<_, _>>()
        .map_err(io(&src))?;
    trip_dirs.sort_by_key(|e| e.file_name());
    for entry in trip_dirs {
        if !entry.path().is_dir() {
            continue;
        }
        let dest = dataset_dir.join("frames").join(entry.file_name());
        fs::create_dir_all(&dest).map_err(io(&dest))?;
        for file in fs::read_dir(entry.path()).map_err(io(&entry.path()))? {
            let file = file.map_err(io(&entry.path()))?;
            let target = dest.join(file.file_name());
            fs::copy(file.path(), &target).map_err(io(&target))?;
            copied += 1;
        }
    }
    Ok(copied)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecomputeReport {
    pub trips: u64,
    pub frames: u64,
    pub changed_trips: u64,
    pub changed_frames: u64,
    /// Frames that had a street match before and have none now.
    pub newly_unmatched: u64,
    pub newly_matched: u64,
}

/// Re-derives every stored trip under `config` and rewrites the store if
/// anything changed. Idempotent.
pub fn recompute_derived(store: &mut Store, config: &Config) -> Result<RecomputeReport, IngestError> {
    config
        .validate()
        .map_err(|e| StoreError::Invalid(e.to_string()))?;
    let segments = store.segments().to_vec();
    let regions = store.regions().to_vec();
    let matcher = Matcher::new(&segments, &regions, config);
    let rederived = store
        .trips()
        .par_iter()
        .map(|t| derive_trip(&export_raw(t), &matcher, config))
        .collect::<Result<Vec<_>, _>>()
        .map_err(StoreError::Invalid)?;

    let mut report = RecomputeReport::default();
    let mut changed_ids = HashSet::new();
    for (old, new) in store.trips().iter().zip(&rederived) {
        report.trips += 1;
        report.frames += old.frames.len() as u64;
        let mut trip_changed = old.agg != new.agg;
        for (a, b) in old.frames.iter().zip(&new.frames) {
            if a != b {
                report.changed_frames += 1;
                trip_changed = true;
                match (&a.segment_id, &b.segment_id) {
                    (Some(_), None) => report.newly_unmatched += 1,
                    (None, Some(_)) => report.newly_matched += 1,
                    _ => {}
                }
            }
        }
        if trip_changed {
            changed_ids.insert(old.trip_id.clone());
        }
    }
    report.changed_trips = changed_ids.len() as u64;
    if report.changed_trips > 0 {
        store.replace_trips(rederived)?;
    }
    if store.config() != config {
        store.set_config(config.clone())?;
    }
    Ok(report)
}
