//! File-backed document store. A dataset directory holds
//!
//! ```text
//! manifest.json      DatasetManifest
//! config.json        Config used to derive the stored documents
//! trips.jsonl        one Trip (with embedded FrameDocs) per line
//! segments.geojson   street segments
//! regions.geojson    zipcode regions
//! frames/            frame images, frames/{trip_id}/{frame_idx}.png
//! ```
//!
//! Everything is loaded into memory on open; indexes are rebuilt from the
//! loaded documents. Adding a trip appends one line to `trips.jsonl`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::doc::{FrameDoc, Trip};
use crate::geo::{self, Region, StreetSegment};
use crate::types::ModelId;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TRIPS_FILE: &str = "trips.jsonl";
pub const SEGMENTS_FILE: &str = "segments.geojson";
pub const REGIONS_FILE: &str = "regions.geojson";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("trip {0:?} not found")]
    NotFound(String),
    #[error("trip {0:?} already exists")]
    Conflict(String),
    #[error("invalid document: {0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub trips: u64,
    pub frames: u64,
    pub segments: u64,
    pub regions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub models: Vec<ModelId>,
    pub counts: Counts,
    /// Milliseconds since the Unix epoch.
    pub created_at: i64,
    pub schema_version: u32,
}

impl DatasetManifest {
    fn new() -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or_default();
        DatasetManifest {
            models: Vec::new(),
            counts: Counts::default(),
            created_at,
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// Everything a dataset directory holds, as returned by [`Store::load_all`].
pub struct Loaded {
    pub manifest: DatasetManifest,
    pub config: Config,
    pub trips: Vec<Trip>,
    pub segments: Vec<StreetSegment>,
    pub regions: Vec<Region>,
}

#[derive(Debug)]
pub struct Store {
    dir: Option<PathBuf>,
    manifest: DatasetManifest,
    config: Config,
    /// Sorted by `trip_id`.
    trips: Vec<Trip>,
    segments: Vec<StreetSegment>,
    regions: Vec<Region>,
}

impl Store {
    /// A store that never touches the filesystem.
    pub fn in_memory(config: Config) -> Self {
        Store {
            dir: None,
            manifest: DatasetManifest::new(),
            config,
            trips: Vec::new(),
            segments: Vec::new(),
            regions: Vec::new(),
        }
    }

    /// Initialises an empty dataset directory. Existing dataset files in
    /// `dir` are truncated.
    pub fn create(dir: impl Into<PathBuf>, config: Config) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let store = Store {
            dir: Some(dir.clone()),
            ..Store::in_memory(config)
        };
        let trips = dir.join(TRIPS_FILE);
        File::create(&trips).map_err(io_err(&trips))?;
        store.write_geometry()?;
        store.write_json(CONFIG_FILE, &store.config)?;
        store.write_manifest()?;
        Ok(store)
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let loaded = Store::load_all(&dir)?;
        Ok(Store {
            dir: Some(dir),
            manifest: loaded.manifest,
            config: loaded.config,
            trips: loaded.trips,
            segments: loaded.segments,
            regions: loaded.regions,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn models(&self) -> &[ModelId] {
        &self.manifest.models
    }

    pub fn trips(&self) -> &[Trip] {
        &self.trips
    }

    pub fn segments(&self) -> &[StreetSegment] {
        &self.segments
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    fn position(&self, trip_id: &str) -> Result<usize, usize> {
        self.trips
            .binary_search_by(|t| t.trip_id.as_str().cmp(trip_id))
    }

    pub fn get_trip(&self, trip_id: &str) -> Result<&Trip, StoreError> {
        self.position(trip_id)
            .map(|i| &self.trips[i])
            .map_err(|_| StoreError::NotFound(trip_id.to_string()))
    }

    /// Frames in `(trip_id, frame_idx)` order, optionally restricted to one
    /// trip.
    pub fn iter_frames<'a>(
        &'a self,
        trip_id: Option<&str>,
    ) -> Result<Box<dyn Iterator<Item = &'a FrameDoc> + 'a>, StoreError> {
        match trip_id {
            None => Ok(Box::new(self.trips.iter().flat_map(|t| t.frames.iter()))),
            Some(id) => Ok(Box::new(self.get_trip(id)?.frames.iter())),
        }
    }

    fn check_trip(&self, trip: &Trip) -> Result<(), StoreError> {
        trip.validate_shape()
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        let models = trip.models();
        if !self.manifest.models.is_empty() && models != self.manifest.models {
            return Err(StoreError::Invalid(format!(
                "trip {:?} scores models {:?}, dataset has {:?}",
                trip.trip_id, models, self.manifest.models
            )));
        }
        let derived = trip.frames.iter().all(|f| {
            models.iter().all(|m| {
                f.predicted.contains_key(m) && f.correct.contains_key(m) && f.perplexity.contains_key(m)
            })
        }) && models.iter().all(|m| trip.agg.contains_key(m));
        if !derived {
            return Err(StoreError::Invalid(format!(
                "trip {:?} lacks derived metrics",
                trip.trip_id
            )));
        }
        Ok(())
    }

    /// Validates and stores a trip, appending it to `trips.jsonl`.
    pub fn put_trip(&mut self, trip: Trip) -> Result<(), StoreError> {
        self.check_trip(&trip)?;
        let pos = match self.position(&trip.trip_id) {
            Ok(_) => return Err(StoreError::Conflict(trip.trip_id)),
            Err(pos) => pos,
        };
        if let Some(dir) = &self.dir {
            let path = dir.join(TRIPS_FILE);
            let line = serde_json::to_string(&trip)
                .map_err(|e| StoreError::Invalid(e.to_string()))?;
            let mut file = OpenOptions::new()
                .append(true)
                .create(true)
                .open(&path)
                .map_err(io_err(&path))?;
            writeln!(file, "{line}").map_err(io_err(&path))?;
        }
        if self.manifest.models.is_empty() {
            self.manifest.models = trip.models();
        }
        self.manifest.counts.trips += 1;
        self.manifest.counts.frames += trip.frames.len() as u64;
        self.trips.insert(pos, trip);
        self.write_manifest()
    }

    /// Replaces the stored geometry.
    pub fn put_geometry(
        &mut self,
        segments: Vec<StreetSegment>,
        regions: Vec<Region>,
    ) -> Result<(), StoreError> {
        self.segments = segments;
        self.regions = regions;
        self.manifest.counts.segments = self.segments.len() as u64;
        self.manifest.counts.regions = self.regions.len() as u64;
        self.write_geometry()?;
        self.write_manifest()
    }

    /// Replaces every stored trip and rewrites `trips.jsonl`. Used when
    /// derived fields are recomputed; trip ids must be unchanged.
    pub fn replace_trips(&mut self, trips: Vec<Trip>) -> Result<(), StoreError> {
        if trips.len() != self.trips.len()
            || trips.iter().zip(&self.trips).any(|(a, b)| a.trip_id != b.trip_id)
        {
            return Err(StoreError::Invalid("replacement changes the trip set".into()));
        }
        for t in &trips {
            self.check_trip(t)?;
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(TRIPS_FILE);
            let tmp = dir.join(format!("{TRIPS_FILE}.tmp"));
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut out = BufWriter::new(file);
            for t in &trips {
                let line =
                    serde_json::to_string(t).map_err(|e| StoreError::Invalid(e.to_string()))?;
                writeln!(out, "{line}").map_err(io_err(&tmp))?;
            }
            out.flush().map_err(io_err(&tmp))?;
            drop(out);
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        self.trips = trips;
        Ok(())
    }

    pub fn set_config(&mut self, config: Config) -> Result<(), StoreError> {
        self.config = config;
        self.write_json(CONFIG_FILE, &self.config)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        let text =
            serde_json::to_string_pretty(value).map_err(|e| StoreError::Invalid(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    fn write_manifest(&self) -> Result<(), StoreError> {
        self.write_json(MANIFEST_FILE, &self.manifest)
    }

    fn write_geometry(&self) -> Result<(), StoreError> {
        self.write_json(SEGMENTS_FILE, &geo::streets_to_geojson(&self.segments))?;
        self.write_json(REGIONS_FILE, &geo::regions_to_geojson(&self.regions))
    }

    fn read_text(path: &Path) -> Result<String, StoreError> {
        fs::read_to_string(path).map_err(io_err(path))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
        let text = Self::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    fn read_trips(path: &Path) -> Result<Vec<Trip>, StoreError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut trips = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let trip: Trip = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            trips.push(trip);
        }
        Ok(trips)
    }

    /// Reads a whole dataset directory.
    pub fn load_all(dir: &Path) -> Result<Loaded, StoreError> {
        let manifest: DatasetManifest = Self::read_json(&dir.join(MANIFEST_FILE))?;
        let corrupt = |file: &str, line: usize, message: String| StoreError::Corrupt {
            path: dir.join(file),
            line,
            message,
        };
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(corrupt(
                MANIFEST_FILE,
                1,
                format!("unsupported schema_version {}", manifest.schema_version),
            ));
        }
        let config_path = dir.join(CONFIG_FILE);
        let config = if config_path.exists() {
            let config: Config = Self::read_json(&config_path)?;
            config
                .validate()
                .map_err(|e| corrupt(CONFIG_FILE, 1, e.to_string()))?;
            config
        } else {
            Config::default()
        };
        let mut trips = Self::read_trips(&dir.join(TRIPS_FILE))?;
        trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
        if let Some(w) = trips.windows(2).find(|w| w[0].trip_id == w[1].trip_id) {
            return Err(corrupt(TRIPS_FILE, 0, format!("duplicate trip {:?}", w[0].trip_id)));
        }
        let segments = geo::parse_streets(&Self::read_text(&dir.join(SEGMENTS_FILE))?)
            .map_err(|e| corrupt(SEGMENTS_FILE, 0, e.to_string()))?;
        let regions = geo::parse_regions(&Self::read_text(&dir.join(REGIONS_FILE))?)
            .map_err(|e| corrupt(REGIONS_FILE, 0, e.to_string()))?;

        let actual = Counts {
            trips: trips.len() as u64,
            frames: trips.iter().map(|t| t.frames.len() as u64).sum(),
            segments: segments.len() as u64,
            regions: regions.len() as u64,
        };
        if actual != manifest.counts {
            return Err(corrupt(
                MANIFEST_FILE,
                1,
                format!("counts {:?} do not match stored documents {:?}", manifest.counts, actual),
            ));
        }
        Ok(Loaded {
            manifest,
            config,
            trips,
            segments,
            regions,
        })
    }
}
