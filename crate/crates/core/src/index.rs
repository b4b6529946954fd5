//! Spatial grid and attribute indexes over stored frames, and evaluation of
//! AND/OR query trees.
//!
//! Frames are addressed by [`FrameId`], their ordinal in `(trip_id,
//! frame_idx)` order, so a sorted id list is already in result order.
//! Attribute predicates resolve to precomputed bitsets; spatial predicates
//! prune by grid cell before running the exact point test.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{FrameDoc, Trip};
use crate::geo::{self, BBox, LatLon, StreetMatch, StreetSegment, EARTH_RADIUS_M};
use crate::metrics::{metric_bin, BinLabel, MetricKind};
use crate::store::Store;
use crate::types::{ActionId, ModelId, StreetScene, TimeOfDay, Weather};

pub mod scan;

/// Default grid cell edge, about 500 m.
pub const DEFAULT_CELL_DEG: f64 = 0.005;

pub type FrameId = u32;

/// Grid cell coordinates `(floor(lon / cell), floor(lat / cell))`.
pub type Cell = (i64, i64);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("invalid query: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> QueryError {
    QueryError::Validation(msg.into())
}

/// One leaf condition of a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    /// Frame location inside the ring (boundary inclusive). The ring is
    /// closed implicitly.
    InRegionPolygon { ring: Vec<LatLon> },
    OnStreet { segment_id: String },
    RegionId { ids: Vec<String> },
    TimeOfDay { values: Vec<TimeOfDay> },
    StreetType { values: Vec<StreetScene> },
    Weather { values: Vec<Weather> },
    ActualAction { actions: Vec<ActionId> },
    PredictedAction { model: ModelId, actions: Vec<ActionId> },
    /// Bin of the containing trip's accuracy. Without a model, any model
    /// in the bin set matches.
    AccuracyBin {
        #[serde(default)]
        model: Option<ModelId>,
        labels: Vec<BinLabel>,
    },
    /// Bin of the containing trip's mean perplexity.
    PerplexityBin {
        #[serde(default)]
        model: Option<ModelId>,
        labels: Vec<BinLabel>,
    },
    CorrectnessPattern { pattern: BTreeMap<ModelId, bool> },
}

/// AND/OR tree over predicates. JSON: `{"and": [..]}`, `{"or": [..]}`,
/// `{"pred": {"type": .., ..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryExpr {
    And(Vec<QueryExpr>),
    Or(Vec<QueryExpr>),
    Pred(Predicate),
}

impl QueryExpr {
    pub fn pred(p: Predicate) -> Self {
        QueryExpr::Pred(p)
    }

    pub fn depth(&self) -> usize {
        match self {
            QueryExpr::Pred(_) => 1,
            QueryExpr::And(c) | QueryExpr::Or(c) => {
                1 + c.iter().map(QueryExpr::depth).max().unwrap_or(0)
            }
        }
    }
}

/// Ids the query validator checks references against.
pub struct Catalog<'a> {
    pub models: &'a [ModelId],
    pub segment_ids: &'a dyn Fn(&str) -> bool,
    pub region_ids: &'a dyn Fn(&str) -> bool,
}

fn non_empty<T>(name: &str, v: &[T]) -> Result<(), QueryError> {
    if v.is_empty() {
        Err(invalid(format!("{name} must not be empty")))
    } else {
        Ok(())
    }
}

impl Predicate {
    pub fn validate(&self, catalog: &Catalog<'_>) -> Result<(), QueryError> {
        let known_model = |m: &ModelId| {
            if catalog.models.contains(m) {
                Ok(())
            } else {
                Err(invalid(format!("unknown model {m:?}")))
            }
        };
        match self {
            Predicate::InRegionPolygon { ring } => {
                let mut distinct = ring.clone();
                distinct.dedup();
                if distinct.len() > 1 && distinct.first() == distinct.last() {
                    distinct.pop();
                }
                if distinct.len() < 3 {
                    return Err(invalid("polygon ring needs at least 3 distinct points"));
                }
                for p in ring {
                    p.validate().map_err(|e| invalid(e.to_string()))?;
                }
            }
            Predicate::OnStreet { segment_id } => {
                if !(catalog.segment_ids)(segment_id) {
                    return Err(invalid(format!("unknown segment {segment_id:?}")));
                }
            }
            Predicate::RegionId { ids } => {
                non_empty("region ids", ids)?;
                if let Some(id) = ids.iter().find(|id| !(catalog.region_ids)(id)) {
                    return Err(invalid(format!("unknown region {id:?}")));
                }
            }
            Predicate::TimeOfDay { values } => non_empty("time_of_day values", values)?,
            Predicate::StreetType { values } => non_empty("street_type values", values)?,
            Predicate::Weather { values } => non_empty("weather values", values)?,
            Predicate::ActualAction { actions } => non_empty("actions", actions)?,
            Predicate::PredictedAction { model, actions } => {
                known_model(model)?;
                non_empty("actions", actions)?;
            }
            Predicate::AccuracyBin { model, labels } | Predicate::PerplexityBin { model, labels } => {
                if let Some(m) = model {
                    known_model(m)?;
                }
                non_empty("bin labels", labels)?;
            }
            Predicate::CorrectnessPattern { pattern } => {
                if pattern.is_empty() {
                    return Err(invalid("correctness pattern must not be empty"));
                }
                for m in pattern.keys() {
                    known_model(m)?;
                }
            }
        }
        Ok(())
    }
}

impl QueryExpr {
    pub fn validate(&self, catalog: &Catalog<'_>) -> Result<(), QueryError> {
        match self {
            QueryExpr::Pred(p) => p.validate(catalog),
            QueryExpr::And(c) | QueryExpr::Or(c) => {
                if c.is_empty() {
                    return Err(invalid("and/or needs at least one child"));
                }
                c.iter().try_for_each(|e| e.validate(catalog))
            }
        }
    }
}

/// Closes a ring if its last point differs from the first.
pub(crate) fn closed_ring(ring: &[LatLon]) -> Vec<LatLon> {
    let mut r = ring.to_vec();
    if r.first() != r.last() {
        if let Some(first) = r.first().copied() {
            r.push(first);
        }
    }
    r
}

fn cell_of(cell_deg: f64, p: &LatLon) -> Cell {
    ((p.lon / cell_deg).floor() as i64, (p.lat / cell_deg).floor() as i64)
}

fn cell_range(cell_deg: f64, b: &BBox) -> (Cell, Cell) {
    (
        cell_of(cell_deg, &LatLon::new(b.min_lat, b.min_lon)),
        cell_of(cell_deg, &LatLon::new(b.max_lat, b.max_lon)),
    )
}

/// Uniform grid over street segments for candidate lookup during matching.
#[derive(Debug, Clone)]
pub struct SegmentGrid {
    cell_deg: f64,
    cells: BTreeMap<Cell, Vec<u32>>,
}

impl SegmentGrid {
    pub fn build(segments: &[StreetSegment], cell_deg: f64) -> Self {
        let mut cells: BTreeMap<Cell, Vec<u32>> = BTreeMap::new();
        for (i, seg) in segments.iter().enumerate() {
            let mut covered = BTreeSet::new();
            for edge in seg.polyline.windows(2) {
                let bbox = BBox::of_points(edge).expect("two points");
                let ((x0, y0), (x1, y1)) = cell_range(cell_deg, &bbox);
                for x in x0..=x1 {
                    for y in y0..=y1 {
                        covered.insert((x, y));
                    }
                }
            }
            for c in covered {
                cells.entry(c).or_default().push(i as u32);
            }
        }
        SegmentGrid { cell_deg, cells }
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    /// Segment indices that may lie within `radius_m` of `p`, sorted and
    /// deduplicated. A superset of the true neighbours.
    pub fn candidates(&self, p: &LatLon, radius_m: f64) -> Vec<u32> {
        let dlat = (radius_m / EARTH_RADIUS_M).to_degrees() * 1.001;
        let dlon = dlat / p.lat.to_radians().cos().max(1e-6);
        let window = BBox {
            min_lat: p.lat - dlat,
            min_lon: p.lon - dlon,
            max_lat: p.lat + dlat,
            max_lon: p.lon + dlon,
        };
        let ((x0, y0), (x1, y1)) = cell_range(self.cell_deg, &window);
        let mut out = Vec::new();
        for x in x0..=x1 {
            for (_, ids) in self.cells.range((x, y0)..=(x, y1)) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// [`geo::match_point`] over grid candidates only.
    pub fn match_point(
        &self,
        segments: &[StreetSegment],
        p: LatLon,
        max_dist: f64,
    ) -> Option<StreetMatch> {
        let cands = self.candidates(&p, max_dist);
        geo::match_point(p, cands.iter().map(|&i| &segments[i as usize]), max_dist)
    }
}

#[derive(Debug, Clone, Copy)]
struct FrameLoc {
    trip: u32,
    frame: u32,
}

#[derive(Debug, Clone, Default)]
struct AttributeIndex {
    time_of_day: BTreeMap<TimeOfDay, FixedBitSet>,
    weather: BTreeMap<Weather, FixedBitSet>,
    street_type: BTreeMap<StreetScene, FixedBitSet>,
    actual: BTreeMap<ActionId, FixedBitSet>,
    /// Indexed by model position.
    predicted: Vec<BTreeMap<ActionId, FixedBitSet>>,
    correct: Vec<FixedBitSet>,
    accuracy_bin: Vec<Vec<FixedBitSet>>,
    perplexity_bin: Vec<Vec<FixedBitSet>>,
    region: BTreeMap<String, Vec<FrameId>>,
    segment: BTreeMap<String, Vec<FrameId>>,
}

/// Grid plus attribute indexes over one store snapshot.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_deg: f64,
    cells: BTreeMap<Cell, Vec<FrameId>>,
    segments: SegmentGrid,
    segment_ids: BTreeSet<String>,
    region_bboxes: BTreeMap<String, BBox>,
    locator: Vec<FrameLoc>,
    trip_starts: Vec<FrameId>,
    models: Vec<ModelId>,
    attrs: AttributeIndex,
}

fn bitset(n: usize) -> FixedBitSet {
    FixedBitSet::with_capacity(n)
}

impl GridIndex {
    /// Indexes every frame of the store. Deterministic for a given store.
    pub fn build(store: &Store, cell_deg: f64) -> Self {
        let n: usize = store.trips().iter().map(|t| t.frames.len()).sum();
        let models = store.models().to_vec();
        let mut attrs = AttributeIndex {
            predicted: vec![BTreeMap::new(); models.len()],
            correct: vec![bitset(n); models.len()],
            accuracy_bin: vec![vec![bitset(n); BinLabel::COUNT]; models.len()],
            perplexity_bin: vec![vec![bitset(n); BinLabel::COUNT]; models.len()],
            ..AttributeIndex::default()
        };
        let mut cells: BTreeMap<Cell, Vec<FrameId>> = BTreeMap::new();
        let mut locator = Vec::with_capacity(n);
        let mut trip_starts = Vec::with_capacity(store.trips().len() + 1);

        for (ti, trip) in store.trips().iter().enumerate() {
            let start = locator.len();
            trip_starts.push(start as FrameId);
            let range = start..start + trip.frames.len();
            let c = &trip.conditions;
            attrs.time_of_day.entry(c.time_of_day).or_insert_with(|| bitset(n)).insert_range(range.clone());
            attrs.weather.entry(c.weather).or_insert_with(|| bitset(n)).insert_range(range.clone());
            attrs.street_type.entry(c.street_scene).or_insert_with(|| bitset(n)).insert_range(range.clone());
            for (mi, model) in models.iter().enumerate() {
                if let Some(agg) = trip.agg.get(model) {
                    if let Ok(b) = metric_bin(agg.accuracy, MetricKind::Accuracy) {
                        attrs.accuracy_bin[mi][b.index()].insert_range(range.clone());
                    }
                    if let Ok(b) = metric_bin(agg.mean_perplexity, MetricKind::Perplexity) {
                        attrs.perplexity_bin[mi][b.index()].insert_range(range.clone());
                    }
                }
            }
            for (fi, frame) in trip.frames.iter().enumerate() {
                let id = locator.len();
                locator.push(FrameLoc {
                    trip: ti as u32,
                    frame: fi as u32,
                });
                cells.entry(cell_of(cell_deg, &frame.location)).or_default().push(id as FrameId);
                attrs.actual.entry(frame.actual).or_insert_with(|| bitset(n)).insert(id);
                for (mi, model) in models.iter().enumerate() {
                    if let Some(a) = frame.predicted.get(model) {
                        attrs.predicted[mi].entry(*a).or_insert_with(|| bitset(n)).insert(id);
                    }
                    if frame.correct.get(model).copied().unwrap_or(false) {
                        attrs.correct[mi].insert(id);
                    }
                }
                if let Some(r) = &frame.region_id {
                    attrs.region.entry(r.clone()).or_default().push(id as FrameId);
                }
                if let Some(s) = &frame.segment_id {
                    attrs.segment.entry(s.clone()).or_default().push(id as FrameId);
                }
            }
        }
        trip_starts.push(locator.len() as FrameId);

        GridIndex {
            cell_deg,
            cells,
            segments: SegmentGrid::build(store.segments(), cell_deg),
            segment_ids: store.segments().iter().map(|s| s.segment_id.clone()).collect(),
            region_bboxes: store
                .regions()
                .iter()
                .map(|r| (r.region_id.clone(), r.bbox()))
                .collect(),
            locator,
            trip_starts,
            models,
            attrs,
        }
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn len(&self) -> usize {
        self.locator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locator.is_empty()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &BTreeMap<Cell, Vec<FrameId>> {
        &self.cells
    }

    pub fn segment_grid(&self) -> &SegmentGrid {
        &self.segments
    }

    pub fn region_bbox(&self, region_id: &str) -> Option<&BBox> {
        self.region_bboxes.get(region_id)
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    /// Frame for an id. Panics on ids not produced by this index.
    pub fn frame<'s>(&self, store: &'s Store, id: FrameId) -> &'s FrameDoc {
        let loc = self.locator[id as usize];
        &store.trips()[loc.trip as usize].frames[loc.frame as usize]
    }

    pub fn trip<'s>(&self, store: &'s Store, id: FrameId) -> &'s Trip {
        &store.trips()[self.locator[id as usize].trip as usize]
    }

    /// Frame ids of the trip at position `trip_pos` in the store.
    pub fn trip_frames(&self, trip_pos: usize) -> Range<FrameId> {
        self.trip_starts[trip_pos]..self.trip_starts[trip_pos + 1]
    }

    pub fn frame_id(&self, store: &Store, trip_id: &str, frame_idx: u32) -> Option<FrameId> {
        let pos = store
            .trips()
            .binary_search_by(|t| t.trip_id.as_str().cmp(trip_id))
            .ok()?;
        let trip = &store.trips()[pos];
        let fpos = trip.frames.binary_search_by_key(&frame_idx, |f| f.frame_idx).ok()?;
        Some(self.trip_starts[pos] + fpos as FrameId)
    }

    fn model_pos(&self, model: &ModelId) -> usize {
        self.models.iter().position(|m| m == model).expect("validated model")
    }

    pub fn validate(&self, expr: &QueryExpr) -> Result<(), QueryError> {
        let segment_ids = |id: &str| self.segment_ids.contains(id);
        let region_ids = |id: &str| self.region_bboxes.contains_key(id);
        expr.validate(&Catalog {
            models: &self.models,
            segment_ids: &segment_ids,
            region_ids: &region_ids,
        })
    }

    /// Ids of all frames satisfying `expr`, ascending.
    pub fn query(&self, store: &Store, expr: &QueryExpr) -> Result<Vec<FrameId>, QueryError> {
        self.validate(expr)?;
        Ok(self.eval(store, expr).ones().map(|i| i as FrameId).collect())
    }

    fn eval(&self, store: &Store, expr: &QueryExpr) -> FixedBitSet {
        match expr {
            QueryExpr::Pred(p) => self.eval_pred(store, p),
            QueryExpr::And(children) => {
                let mut it = children.iter();
                let mut acc = self.eval(store, it.next().expect("validated"));
                for c in it {
                    if acc.is_clear() {
                        break;
                    }
                    acc.intersect_with(&self.eval(store, c));
                }
                acc
            }
            QueryExpr::Or(children) => {
                let mut acc = bitset(self.len());
                for c in children {
                    acc.union_with(&self.eval(store, c));
                }
                acc
            }
        }
    }

    fn union_of<'a, K: Ord + 'a>(
        &self,
        map: &'a BTreeMap<K, FixedBitSet>,
        keys: impl IntoIterator<Item = &'a K>,
    ) -> FixedBitSet {
        let mut out = bitset(self.len());
        for k in keys {
            if let Some(b) = map.get(k) {
                out.union_with(b);
            }
        }
        out
    }

    fn from_ids<'a>(&self, lists: impl IntoIterator<Item = &'a [FrameId]>) -> FixedBitSet {
        let mut out = bitset(self.len());
        for ids in lists {
            out.extend(ids.iter().map(|&i| i as usize));
        }
        out
    }

    fn bins(&self, per_model: &[Vec<FixedBitSet>], model: &Option<ModelId>, labels: &[BinLabel]) -> FixedBitSet {
        let mut out = bitset(self.len());
        let models: Vec<usize> = match model {
            Some(m) => vec![self.model_pos(m)],
            None => (0..self.models.len()).collect(),
        };
        for mi in models {
            for l in labels {
                out.union_with(&per_model[mi][l.index()]);
            }
        }
        out
    }

    /// Frame ids in grid cells overlapping `bbox`, ascending.
    pub fn ids_in_bbox(&self, bbox: &BBox) -> Vec<FrameId> {
        let ((x0, y0), (x1, y1)) = cell_range(self.cell_deg, bbox);
        let span = (x1 - x0 + 1).saturating_mul(y1 - y0 + 1);
        let mut out = Vec::new();
        if span as usize > self.cells.len() {
            for ((x, y), ids) in &self.cells {
                if (x0..=x1).contains(x) && (y0..=y1).contains(y) {
                    out.extend_from_slice(ids);
                }
            }
        } else {
            for x in x0..=x1 {
                for (_, ids) in self.cells.range((x, y0)..=(x, y1)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn eval_pred(&self, store: &Store, p: &Predicate) -> FixedBitSet {
        let a = &self.attrs;
        match p {
            Predicate::InRegionPolygon { ring } => {
                let ring = closed_ring(ring);
                let mut out = bitset(self.len());
                let Some(bbox) = BBox::of_points(&ring) else { return out };
                for id in self.ids_in_bbox(&bbox) {
                    let loc = &self.frame(store, id).location;
                    if bbox.contains(loc) && geo::point_in_rings(loc, [ring.as_slice()]) {
                        out.insert(id as usize);
                    }
                }
                out
            }
            Predicate::OnStreet { segment_id } => {
                self.from_ids(a.segment.get(segment_id).map(Vec::as_slice))
            }
            Predicate::RegionId { ids } => {
                self.from_ids(ids.iter().filter_map(|id| a.region.get(id).map(Vec::as_slice)))
            }
            Predicate::TimeOfDay { values } => self.union_of(&a.time_of_day, values),
            Predicate::Weather { values } => self.union_of(&a.weather, values),
            Predicate::StreetType { values } => self.union_of(&a.street_type, values),
            Predicate::ActualAction { actions } => self.union_of(&a.actual, actions),
            Predicate::PredictedAction { model, actions } => {
                self.union_of(&a.predicted[self.model_pos(model)], actions)
            }
            Predicate::AccuracyBin { model, labels } => self.bins(&a.accuracy_bin, model, labels),
            Predicate::PerplexityBin { model, labels } => self.bins(&a.perplexity_bin, model, labels),
            Predicate::CorrectnessPattern { pattern } => {
                let mut out = bitset(self.len());
                out.insert_range(..);
                for (model, want) in pattern {
                    let correct = &a.correct[self.model_pos(model)];
                    if *want {
                        out.intersect_with(correct);
                    } else {
                        out.difference_with(correct);
                    }
                }
                out
            }
        }
    }

    /// Keeps the ids whose frames match the correctness pattern. An empty
    /// pattern keeps everything.
    pub fn correctness_pattern_filter(
        &self,
        ids: &[FrameId],
        pattern: &BTreeMap<ModelId, bool>,
    ) -> Result<Vec<FrameId>, QueryError> {
        let mut constraints = Vec::with_capacity(pattern.len());
        for (model, want) in pattern {
            let pos = self
                .models
                .iter()
                .position(|m| m == model)
                .ok_or_else(|| invalid(format!("unknown model {model:?}")))?;
            constraints.push((&self.attrs.correct[pos], *want));
        }
        Ok(ids
            .iter()
            .copied()
            .filter(|&id| {
                constraints
                    .iter()
                    .all(|(bits, want)| bits.contains(id as usize) == *want)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "lt", alias = "<")]
    Lt,
    #[serde(rename = "ge", alias = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Ge => value >= threshold,
        }
    }
}

/// Trip ids whose aggregate `metric` satisfies the comparison for every
/// listed model, ascending.
pub fn query_trips_by_metric(
    store: &Store,
    models: &[ModelId],
    metric: MetricKind,
    comparator: Comparator,
    threshold: f64,
) -> Result<Vec<String>, QueryError> {
    if models.is_empty() {
        return Err(invalid("at least one model required"));
    }
    if let Some(m) = models.iter().find(|m| !store.models().contains(m)) {
        return Err(invalid(format!("unknown model {m:?}")));
    }
    let in_domain = threshold.is_finite()
        && match metric {
            MetricKind::Accuracy => (0.0..=1.0).contains(&threshold),
            MetricKind::Perplexity => threshold >= 1.0,
        };
    if !in_domain {
        return Err(invalid(format!("{metric} threshold {threshold} outside its domain")));
    }
    Ok(store
        .trips()
        .iter()
        .filter(|t| {
            models.iter().all(|m| {
                t.agg.get(m).is_some_and(|a| {
                    let v = match metric {
                        MetricKind::Accuracy => a.accuracy,
                        MetricKind::Perplexity => a.mean_perplexity,
                    };
                    comparator.holds(v, threshold)
                })
            })
        })
        .map(|t| t.trip_id.clone())
        .collect())
}
