//! Deterministic synthetic datasets: a street grid, rectangular zip
//! regions, random-walk trips along the streets, score vectors with planted
//! accuracy, and per-frame grayscale images.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::GrayImage;
use crate::doc::FrameDoc;
use crate::geo::{self, local_unproject, BBox, LatLon, Polygon, Region, StreetSegment};
use crate::index::{Predicate, QueryExpr};
use crate::ingest::{RawFrame, RawTrip};
use crate::metrics::BinLabel;
use crate::store::{Store, REGIONS_FILE, SEGMENTS_FILE, TRIPS_FILE};
use crate::types::{ActionId, ModelId, StreetScene, TimeOfDay, Weather};

/// Frames per second of generated trips.
pub const FRAME_RATE: u32 = 3;

/// Name of the summary file written next to the raw data.
pub const SUMMARY_FILE: &str = "planted.json";

const LATERAL_JITTER_M: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] crate::analytics::ImageError),
}

/// Accuracy a model is given, by trip condition. The first matching entry
/// among weather, time of day and street scene wins; otherwise `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedAccuracy {
    pub default: f64,
    pub weather: BTreeMap<Weather, f64>,
    pub time_of_day: BTreeMap<TimeOfDay, f64>,
    pub street_scene: BTreeMap<StreetScene, f64>,
}

impl Default for PlantedAccuracy {
    fn default() -> Self {
        PlantedAccuracy {
            default: 0.7,
            weather: BTreeMap::new(),
            time_of_day: BTreeMap::new(),
            street_scene: BTreeMap::new(),
        }
    }
}

impl PlantedAccuracy {
    pub fn for_conditions(&self, weather: Weather, time: TimeOfDay, scene: StreetScene) -> f64 {
        self.weather
            .get(&weather)
            .or_else(|| self.time_of_day.get(&time))
            .or_else(|| self.street_scene.get(&scene))
            .copied()
            .unwrap_or(self.default)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.default)
            .chain(self.weather.values().copied())
            .chain(self.time_of_day.values().copied())
            .chain(self.street_scene.values().copied())
    }
}

/// Street grid and region layout. Streets run east-west and north-south,
/// `block_m` apart; regions tile the grid in `region_cols` by `region_rows`
/// rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Layout {
    /// South-west street intersection.
    pub origin: LatLon,
    pub streets_ns: usize,
    pub streets_ew: usize,
    pub block_m: f64,
    pub region_cols: usize,
    pub region_rows: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            origin: LatLon::new(40.73, -73.99),
            streets_ns: 8,
            streets_ew: 8,
            block_m: 250.0,
            region_cols: 2,
            region_rows: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_trips: usize,
    pub frames_per_trip: usize,
    pub models: Vec<ModelId>,
    /// Models without an entry use the default planted accuracy.
    pub accuracy: BTreeMap<ModelId, PlantedAccuracy>,
    /// Trip conditions are drawn uniformly from these lists.
    pub weathers: Vec<Weather>,
    pub times_of_day: Vec<TimeOfDay>,
    pub street_scenes: Vec<StreetScene>,
    pub layout: Layout,
    /// `None` disables frame images.
    pub images: Option<ImageSpec>,
    pub start_time_ms: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_trips: 100,
            frames_per_trip: 120,
            models: ["tcnn1", "cnn_lstm", "fcn_lstm"]
                .iter()
                .map(|m| ModelId::new(*m).expect("non-empty"))
                .collect(),
            accuracy: BTreeMap::new(),
            weathers: vec![Weather::Clear, Weather::Overcast, Weather::Rainy, Weather::Snowy],
            times_of_day: vec![TimeOfDay::Day, TimeOfDay::Night, TimeOfDay::DawnDusk],
            street_scenes: vec![StreetScene::CityStreet, StreetScene::Highway, StreetScene::Residential],
            layout: Layout::default(),
            images: Some(ImageSpec { width: 64, height: 48 }),
            start_time_ms: 1_500_000_000_000,
        }
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| SynthError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.to_string()));
        if self.n_trips == 0 || self.frames_per_trip == 0 {
            return bad("n_trips and frames_per_trip must be positive");
        }
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        if let Some(m) = self.accuracy.keys().find(|m| !self.models.contains(m)) {
            return Err(SynthError::Spec(format!("accuracy given for unlisted model {m}")));
        }
        if self
            .accuracy
            .values()
            .flat_map(PlantedAccuracy::values)
            .any(|p| !(0.0..=1.0).contains(&p))
        {
            return bad("accuracies must lie in [0, 1]");
        }
        if self.weathers.is_empty() || self.times_of_day.is_empty() || self.street_scenes.is_empty() {
            return bad("condition lists must not be empty");
        }
        let l = &self.layout;
        if l.streets_ns < 2 || l.streets_ew < 2 {
            return bad("layout needs at least 2 streets in each direction");
        }
        if !(l.block_m.is_finite() && l.block_m > 2.0 * LATERAL_JITTER_M) {
            return bad("block_m is too small");
        }
        if l.region_cols == 0 || l.region_rows == 0 {
            return bad("region grid must be at least 1x1");
        }
        let extent = (l.streets_ns.max(l.streets_ew) as f64 + 1.0) * l.block_m;
        if extent > 50_000.0 {
            return bad("layout spans more than 50 km");
        }
        l.origin.validate().map_err(|e| SynthError::Spec(e.to_string()))?;
        if let Some(img) = self.images {
            if img.width == 0 || img.height == 0 {
                return bad("image dimensions must be positive");
            }
        }
        Ok(())
    }

    fn planted(&self, model: &ModelId) -> PlantedAccuracy {
        self.accuracy.get(model).cloned().unwrap_or_default()
    }
}

/// Counts describing what was generated, computed in the generator's own
/// planar coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub seed: u64,
    pub trips: u64,
    pub frames: u64,
    pub trips_per_weather: BTreeMap<Weather, u64>,
    pub frames_per_weather: BTreeMap<Weather, u64>,
    /// Trips with at least one frame inside each region.
    pub trips_per_region: BTreeMap<String, u64>,
    /// Fraction of frames generated as correct, per model.
    pub realized_accuracy: BTreeMap<ModelId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub trips: Vec<RawTrip>,
    pub segments: Vec<StreetSegment>,
    pub regions: Vec<Region>,
    pub summary: SynthSummary,
}

#[derive(Debug, Clone, Copy)]
struct RegionRect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl RegionRect {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

fn region_id(k: usize) -> String {
    format!("{}", 10001 + k)
}

fn region_rects(l: &Layout) -> Vec<RegionRect> {
    let margin = l.block_m / 2.0;
    let w = (l.streets_ns - 1) as f64 * l.block_m + 2.0 * margin;
    let h = (l.streets_ew - 1) as f64 * l.block_m + 2.0 * margin;
    let (cw, ch) = (w / l.region_cols as f64, h / l.region_rows as f64);
    let mut rects = Vec::new();
    for r in 0..l.region_rows {
        for c in 0..l.region_cols {
            rects.push(RegionRect {
                x0: -margin + c as f64 * cw,
                y0: -margin + r as f64 * ch,
                x1: -margin + (c + 1) as f64 * cw,
                y1: -margin + (r + 1) as f64 * ch,
            });
        }
    }
    rects
}

fn round_to(v: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    (v * scale).round() / scale
}

fn to_latlon(origin: LatLon, x: f64, y: f64) -> LatLon {
    let p = local_unproject(origin, x, y);
    LatLon::new(round_to(p.lat, 7), round_to(p.lon, 7))
}

fn build_geometry(l: &Layout) -> (Vec<StreetSegment>, Vec<Region>) {
    let node = |i: usize, j: usize| to_latlon(l.origin, i as f64 * l.block_m, j as f64 * l.block_m);
    let street_type = |border: bool| {
        if border {
            StreetScene::Residential
        } else {
            StreetScene::CityStreet
        }
    };
    let mut segments = Vec::new();
    for j in 0..l.streets_ew {
        for i in 0..l.streets_ns - 1 {
            segments.push(StreetSegment {
                segment_id: format!("h{j:02}-{i:02}"),
                polyline: vec![node(i, j), node(i + 1, j)],
                street_type: street_type(j == 0 || j == l.streets_ew - 1),
            });
        }
    }
    for i in 0..l.streets_ns {
        for j in 0..l.streets_ew - 1 {
            segments.push(StreetSegment {
                segment_id: format!("v{i:02}-{j:02}"),
                polyline: vec![node(i, j), node(i, j + 1)],
                street_type: street_type(i == 0 || i == l.streets_ns - 1),
            });
        }
    }
    let regions = region_rects(l)
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let c = |x, y| to_latlon(l.origin, x, y);
            Region {
                region_id: region_id(k),
                polygons: vec![Polygon {
                    exterior: vec![c(r.x0, r.y0), c(r.x1, r.y0), c(r.x1, r.y1), c(r.x0, r.y1), c(r.x0, r.y0)],
                    holes: vec![],
                }],
            }
        })
        .collect();
    (segments, regions)
}

const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

/// Planar random walk along the street grid, one point per frame.
fn walk(rng: &mut ChaCha8Rng, l: &Layout, frames: usize) -> Vec<(f64, f64)> {
    let (nx, ny) = (l.streets_ns as i64, l.streets_ew as i64);
    let valid = |i: i64, j: i64, d: usize| {
        let (ni, nj) = (i + DIRS[d].0, j + DIRS[d].1);
        (0..nx).contains(&ni) && (0..ny).contains(&nj)
    };
    let (mut i, mut j) = (rng.random_range(0..nx), rng.random_range(0..ny));
    let choices: Vec<usize> = (0..4).filter(|&d| valid(i, j, d)).collect();
    let mut dir = *choices.choose(rng).expect("grid has at least 2x2 nodes");
    let mut along = 0.0;
    let mut speed: f64 = rng.random_range(6.0..14.0);
    let offset = rng.random_range(-LATERAL_JITTER_M..LATERAL_JITTER_M);
    let dt = 1.0 / f64::from(FRAME_RATE);
    let mut points = Vec::with_capacity(frames);
    for _ in 0..frames {
        let (dx, dy) = (DIRS[dir].0 as f64, DIRS[dir].1 as f64);
        let x = i as f64 * l.block_m + dx * along - dy * offset;
        let y = j as f64 * l.block_m + dy * along + dx * offset;
        points.push((x, y));
        speed = (speed + rng.random_range(-0.5..0.5)).clamp(3.0, 20.0);
        along += speed * dt;
        while along >= l.block_m {
            along -= l.block_m;
            i += DIRS[dir].0;
            j += DIRS[dir].1;
            let reverse = (dir + 2) % 4;
            let mut options: Vec<usize> = (0..4).filter(|&d| d != reverse && valid(i, j, d)).collect();
            if options.is_empty() {
                options.push(reverse);
            }
            dir = *options.choose(rng).expect("non-empty");
        }
    }
    points
}

fn next_action(rng: &mut ChaCha8Rng, prev: Option<ActionId>) -> ActionId {
    if let Some(p) = prev {
        if rng.random_bool(0.8) {
            return p;
        }
    }
    let r: f64 = rng.random();
    match r {
        r if r < 0.6 => ActionId::GoStraight,
        r if r < 0.8 => ActionId::SlowStop,
        r if r < 0.9 => ActionId::TurnLeft,
        _ => ActionId::TurnRight,
    }
}

/// Score vector whose unique argmax is `target`.
fn scores_for(rng: &mut ChaCha8Rng, target: ActionId) -> [f64; 4] {
    let top = round_to(rng.random_range(0.4..0.95), 4);
    let mut s = [0.0; 4];
    for (slot, v) in s.iter_mut().enumerate() {
        *v = if slot == target.slot() {
            top
        } else {
            round_to(rng.random_range(0.0..top - 0.05), 4)
        };
    }
    s
}

fn trip_rng(seed: u64, trip: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trip as u64 + 1);
    rng
}

fn image_rng(seed: u64, trip: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * trip as u64 + 2);
    rng
}

struct GeneratedTrip {
    raw: RawTrip,
    correct: BTreeMap<ModelId, u64>,
    regions_visited: Vec<bool>,
}

fn generate_trip(seed: u64, spec: &SynthSpec, k: usize, rects: &[RegionRect]) -> GeneratedTrip {
    let mut rng = trip_rng(seed, k);
    let weather = *spec.weathers.choose(&mut rng).expect("validated");
    let time_of_day = *spec.times_of_day.choose(&mut rng).expect("validated");
    let street_scene = *spec.street_scenes.choose(&mut rng).expect("validated");
    let planted: Vec<(ModelId, f64)> = spec
        .models
        .iter()
        .map(|m| (m.clone(), spec.planted(m).for_conditions(weather, time_of_day, street_scene)))
        .collect();
    let path = walk(&mut rng, &spec.layout, spec.frames_per_trip);
    let start = spec.start_time_ms + k as i64 * 3_600_000;
    let mut correct: BTreeMap<ModelId, u64> = spec.models.iter().map(|m| (m.clone(), 0)).collect();
    let mut regions_visited = vec![false; rects.len()];
    let mut prev = None;
    let mut frames = Vec::with_capacity(path.len());
    for (idx, &(x, y)) in path.iter().enumerate() {
        let actual = next_action(&mut rng, prev);
        prev = Some(actual);
        let mut scores = BTreeMap::new();
        for (model, p) in &planted {
            let target = if rng.random_bool(*p) {
                *correct.get_mut(model).expect("model listed") += 1;
                actual
            } else {
                let others: Vec<ActionId> = ActionId::ALL.iter().copied().filter(|a| *a != actual).collect();
                *others.choose(&mut rng).expect("three others")
            };
            scores.insert(model.clone(), scores_for(&mut rng, target));
        }
        for (seen, rect) in regions_visited.iter_mut().zip(rects) {
            *seen |= rect.contains(x, y);
        }
        let p = to_latlon(spec.layout.origin, x, y);
        frames.push(RawFrame {
            t: start + (idx as i64 * 1000) / i64::from(FRAME_RATE),
            lat: p.lat,
            lon: p.lon,
            speed_mps: round_to(rng.random_range(3.0..20.0), 2),
            actual,
            scores,
        });
    }
    GeneratedTrip {
        raw: RawTrip {
            trip_id: format!("trip-{k:05}"),
            weather,
            time_of_day,
            street_scene,
            frames,
        },
        correct,
        regions_visited,
    }
}

/// Generates trips and geometry for `spec`. Identical inputs give
/// identical output; each trip draws from its own stream of the seeded RNG.
pub fn generate_synthetic(seed: u64, spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let (segments, regions) = build_geometry(&spec.layout);
    let rects = region_rects(&spec.layout);
    let generated: Vec<GeneratedTrip> = (0..spec.n_trips)
        .into_par_iter()
        .map(|k| generate_trip(seed, spec, k, &rects))
        .collect();

    let mut summary = SynthSummary {
        seed,
        trips: generated.len() as u64,
        ..SynthSummary::default()
    };
    let mut correct: BTreeMap<ModelId, u64> = BTreeMap::new();
    for (k, _) in rects.iter().enumerate() {
        summary.trips_per_region.insert(region_id(k), 0);
    }
    for g in &generated {
        let n = g.raw.frames.len() as u64;
        summary.frames += n;
        *summary.trips_per_weather.entry(g.raw.weather).or_default() += 1;
        *summary.frames_per_weather.entry(g.raw.weather).or_default() += n;
        for (m, c) in &g.correct {
            *correct.entry(m.clone()).or_default() += c;
        }
        for (k, _) in g.regions_visited.iter().enumerate().filter(|(_, v)| **v) {
            *summary.trips_per_region.entry(region_id(k)).or_default() += 1;
        }
    }
    summary.realized_accuracy = correct
        .into_iter()
        .map(|(m, c)| (m, c as f64 / summary.frames as f64))
        .collect();
    Ok(SynthData {
        trips: generated.into_iter().map(|g| g.raw).collect(),
        segments,
        regions,
        summary,
    })
}

/// Image of frame `frame_idx` of trip number `trip`. Frames of one trip
/// share a pattern and drift slowly; different trips differ.
pub fn render_frame_image(seed: u64, trip: usize, frame_idx: u32, spec: ImageSpec) -> GrayImage {
    let mut rng = image_rng(seed, trip);
    let fx = rng.random_range(0.05..0.4);
    let fy = rng.random_range(0.05..0.4);
    let (px, py) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let horizon = rng.random_range(0.3..0.6) * spec.height as f64;
    let sky = rng.random_range(120.0..230.0);
    // Per-frame noise comes from a stream position that depends on the frame.
    let mut noise = ChaCha8Rng::seed_from_u64(rng.random::<u64>() ^ u64::from(frame_idx));
    let drift = f64::from(frame_idx) * 0.03;
    let pixels = (0..spec.height)
        .flat_map(|y| (0..spec.width).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (xf, yf) = (f64::from(x), f64::from(y));
            let base = if yf < horizon {
                sky - 20.0 * (yf / horizon)
            } else {
                90.0 + 50.0 * (fx * xf + px + drift).sin() + 30.0 * (fy * yf + py).cos()
            };
            (base + noise.random_range(-6.0..6.0)).clamp(0.0, 255.0).round() as f32
        })
        .collect();
    GrayImage::new(spec.width, spec.height, pixels).expect("pixel count matches")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SynthError> {
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(bytes).map_err(io)
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    bytes
}

/// Generates a dataset and writes the raw trips file, geometry, frame
/// images and a summary into `out`.
pub fn write_synthetic(seed: u64, spec: &SynthSpec, out: &Path) -> Result<SynthSummary, SynthError> {
    let data = generate_synthetic(seed, spec)?;
    fs::create_dir_all(out).map_err(|source| SynthError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut lines = Vec::new();
    for t in &data.trips {
        serde_json::to_writer(&mut lines, t).expect("serializable");
        lines.push(b'\n');
    }
    write_file(&out.join(TRIPS_FILE), &lines)?;
    write_file(&out.join(SEGMENTS_FILE), &json_bytes(&geo::streets_to_geojson(&data.segments)))?;
    write_file(&out.join(REGIONS_FILE), &json_bytes(&geo::regions_to_geojson(&data.regions)))?;
    write_file(&out.join(SUMMARY_FILE), &json_bytes(&data.summary))?;

    if let Some(img) = spec.images {
        data.trips
            .par_iter()
            .enumerate()
            .try_for_each(|(k, trip)| -> Result<(), SynthError> {
                let dir = out.join("frames").join(&trip.trip_id);
                fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
                    path: dir.clone(),
                    source,
                })?;
                for idx in 0..trip.frames.len() as u32 {
                    let path = out.join(FrameDoc::image_path(&trip.trip_id, idx));
                    render_frame_image(seed, k, idx, img).save_png(&path)?;
                }
                Ok(())
            })?;
    }
    Ok(data.summary)
}

/// Ids and extent random query expressions may refer to.
#[derive(Debug, Clone)]
pub struct ExprContext {
    pub models: Vec<ModelId>,
    pub segment_ids: Vec<String>,
    pub region_ids: Vec<String>,
    pub bbox: BBox,
}

impl ExprContext {
    pub fn from_store(store: &Store) -> Self {
        let bbox = BBox::of_points(store.trips().iter().flat_map(|t| &t.frames).map(|f| &f.location)).unwrap_or(BBox {
            min_lat: 0.0,
            min_lon: 0.0,
            max_lat: 0.01,
            max_lon: 0.01,
        });
        ExprContext {
            models: store.models().to_vec(),
            segment_ids: store.segments().iter().map(|s| s.segment_id.clone()).collect(),
            region_ids: store.regions().iter().map(|r| r.region_id.clone()).collect(),
            bbox,
        }
    }
}

fn subset<T: Copy, R: Rng>(rng: &mut R, all: &[T]) -> Vec<T> {
    let n = rng.random_range(1..=all.len());
    let mut v = all.to_vec();
    v.shuffle(rng);
    v.truncate(n);
    v
}

fn random_point<R: Rng>(rng: &mut R, b: &BBox) -> LatLon {
    // Slightly beyond the extent so polygons can clip the data.
    let pad_lat = (b.max_lat - b.min_lat) * 0.1;
    let pad_lon = (b.max_lon - b.min_lon) * 0.1;
    LatLon::new(
        rng.random_range(b.min_lat - pad_lat..=b.max_lat + pad_lat),
        rng.random_range(b.min_lon - pad_lon..=b.max_lon + pad_lon),
    )
}

fn random_predicate<R: Rng>(rng: &mut R, ctx: &ExprContext) -> Predicate {
    let bins: Vec<BinLabel> = BinLabel::all().collect();
    loop {
        let model = ctx.models.choose(rng).cloned();
        let opt_model = |rng: &mut R| if rng.random_bool(0.5) { model.clone() } else { None };
        let p = match rng.random_range(0..11) {
            0 => {
                let n = rng.random_range(3..=5);
                let ring: Vec<LatLon> = (0..n).map(|_| random_point(rng, &ctx.bbox)).collect();
                Predicate::InRegionPolygon { ring }
            }
            1 => match ctx.segment_ids.choose(rng) {
                Some(id) => Predicate::OnStreet { segment_id: id.clone() },
                None => continue,
            },
            2 if !ctx.region_ids.is_empty() => Predicate::RegionId {
                ids: subset(rng, &ctx.region_ids.iter().collect::<Vec<_>>())
                    .into_iter()
                    .cloned()
                    .collect(),
            },
            3 => Predicate::TimeOfDay { values: subset(rng, TimeOfDay::ALL) },
            4 => Predicate::StreetType { values: subset(rng, StreetScene::ALL) },
            5 => Predicate::Weather { values: subset(rng, Weather::ALL) },
            6 => Predicate::ActualAction { actions: subset(rng, &ActionId::ALL) },
            7 => match model {
                Some(model) => Predicate::PredictedAction {
                    model,
                    actions: subset(rng, &ActionId::ALL),
                },
                None => continue,
            },
            8 => Predicate::AccuracyBin {
                model: opt_model(rng),
                labels: subset(rng, &bins),
            },
            9 => Predicate::PerplexityBin {
                model: opt_model(rng),
                labels: subset(rng, &bins),
            },
            10 if !ctx.models.is_empty() => {
                let models = subset(rng, &ctx.models.iter().collect::<Vec<_>>());
                Predicate::CorrectnessPattern {
                    pattern: models.into_iter().map(|m| (m.clone(), rng.random_bool(0.5))).collect(),
                }
            }
            _ => continue,
        };
        return p;
    }
}

/// Random valid expression of depth at most `max_depth` (at least 1).
pub fn random_expr<R: Rng>(rng: &mut R, ctx: &ExprContext, max_depth: usize) -> QueryExpr {
    if max_depth <= 1 || rng.random_bool(0.35) {
        return QueryExpr::Pred(random_predicate(rng, ctx));
    }
    let n = rng.random_range(1..=3);
    let children = (0..n).map(|_| random_expr(rng, ctx, max_depth - 1)).collect();
    if rng.random_bool(0.5) {
        QueryExpr::And(children)
    } else {
        QueryExpr::Or(children)
    }
}
