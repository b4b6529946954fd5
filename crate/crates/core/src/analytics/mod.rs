//! Reports over frame and trip selections: grouped aggregates, correctness
//! combination tables, histograms, trip timelines, KDE rasters and
//! SSIM-based representative frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{FrameDoc, Trip};
use crate::geo::LatLon;
use crate::metrics::{metric_bin, BinLabel, MetricKind};
use crate::types::{ActionId, ModelId, ScoreVector, SpatialConditions, StreetScene, TimeOfDay, Weather};

mod kde;
mod ssim;

pub use kde::{kde_raster, DensityRaster, KdeError};
pub use ssim::{
    select_representatives, ssim, GrayImage, ImageError, Representatives, SsimError,
    DEFAULT_THUMBNAIL_CAP, THUMBNAIL_SIZE,
};

/// Group name for frames without a matched region or street.
pub const UNMATCHED: &str = "unmatched";

/// Largest model count a combination table accepts.
pub const MAX_COMBINATION_MODELS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("unknown model {0:?}")]
    UnknownModel(ModelId),
    #[error("combination table supports at most {MAX_COMBINATION_MODELS} models, got {0}")]
    TooManyModels(usize),
    #[error("dimension {0:?} requires a model")]
    ModelRequired(HistogramDimension),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Region,
    Street,
    Weather,
    TimeOfDay,
    StreetType,
    ActualAction,
}

impl GroupKey {
    fn value(self, frame: &FrameDoc, trip: &Trip) -> String {
        let c = &trip.conditions;
        match self {
            GroupKey::Region => frame.region_id.clone().unwrap_or_else(|| UNMATCHED.into()),
            GroupKey::Street => frame.segment_id.clone().unwrap_or_else(|| UNMATCHED.into()),
            GroupKey::Weather => c.weather.as_str().into(),
            GroupKey::TimeOfDay => c.time_of_day.as_str().into(),
            GroupKey::StreetType => c.street_scene.as_str().into(),
            GroupKey::ActualAction => frame.actual.as_str().into(),
        }
    }
}

/// Per-model (or pooled) statistics of one group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: u64,
    pub correct: u64,
    /// Absent when `count` is zero.
    pub accuracy: Option<f64>,
    pub mean_perplexity: Option<f64>,
    #[serde(skip)]
    perplexity_sum: f64,
}

impl GroupStats {
    fn add(&mut self, correct: bool, perplexity: f64) {
        self.count += 1;
        self.correct += u64::from(correct);
        self.perplexity_sum += perplexity;
    }

    fn finish(&mut self) {
        if self.count > 0 {
            self.accuracy = Some(self.correct as f64 / self.count as f64);
            self.mean_perplexity = Some(self.perplexity_sum / self.count as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub group_key: String,
    /// Frames in the group.
    pub count: u64,
    pub models: BTreeMap<ModelId, GroupStats>,
    /// All (frame, model) pairs of the group pooled together.
    pub combined: GroupStats,
}

/// Groups frames by `key` and reports accuracy and mean perplexity per
/// model. Reports are sorted by group value.
pub fn aggregate_by<'a>(
    frames: impl IntoIterator<Item = (&'a FrameDoc, &'a Trip)>,
    key: GroupKey,
    models: &[ModelId],
) -> Vec<AggregateReport> {
    let mut groups: BTreeMap<String, AggregateReport> = BTreeMap::new();
    for (frame, trip) in frames {
        let report = groups
            .entry(key.value(frame, trip))
            .or_insert_with_key(|k| AggregateReport {
                group_key: k.clone(),
                count: 0,
                models: models.iter().map(|m| (m.clone(), GroupStats::default())).collect(),
                combined: GroupStats::default(),
            });
        report.count += 1;
        for m in models {
            let (Some(&correct), Some(&ppl)) = (frame.correct.get(m), frame.perplexity.get(m)) else {
                continue;
            };
            report.models.get_mut(m).expect("seeded").add(correct, ppl);
            report.combined.add(correct, ppl);
        }
    }
    groups
        .into_values()
        .map(|mut r| {
            r.models.values_mut().for_each(GroupStats::finish);
            r.combined.finish();
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationRow {
    /// Correctness per model, aligned with [`CombinationTable::models`].
    pub pattern: Vec<bool>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationTable {
    pub models: Vec<ModelId>,
    pub rows: Vec<CombinationRow>,
    pub total: u64,
}

/// Pattern of row `row` for `m` models; the first model is the most
/// significant bit, so row 0 is all-false and the last row all-true.
pub fn combination_pattern(row: usize, m: usize) -> Vec<bool> {
    (0..m).map(|i| row >> (m - 1 - i) & 1 == 1).collect()
}

/// Counts frames per correctness pattern over `models`.
pub fn combination_table<'a>(
    frames: impl IntoIterator<Item = &'a FrameDoc>,
    models: &[ModelId],
) -> Result<CombinationTable, AnalyticsError> {
    if models.len() > MAX_COMBINATION_MODELS {
        return Err(AnalyticsError::TooManyModels(models.len()));
    }
    let m = models.len();
    let mut counts = vec![0u64; 1 << m];
    let mut total = 0;
    for frame in frames {
        let mut row = 0usize;
        for model in models {
            let correct = *frame
                .correct
                .get(model)
                .ok_or_else(|| AnalyticsError::UnknownModel(model.clone()))?;
            row = row << 1 | usize::from(correct);
        }
        counts[row] += 1;
        total += 1;
    }
    Ok(CombinationTable {
        models: models.to_vec(),
        rows: counts
            .into_iter()
            .enumerate()
            .map(|(row, count)| CombinationRow {
                pattern: combination_pattern(row, m),
                count,
            })
            .collect(),
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramDimension {
    AccuracyBin,
    PerplexityBin,
    Weather,
    TimeOfDay,
    StreetType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub label: String,
    pub count: u64,
}

fn labels(dimension: HistogramDimension) -> Vec<String> {
    match dimension {
        HistogramDimension::AccuracyBin | HistogramDimension::PerplexityBin => {
            BinLabel::all().map(|b| b.to_string()).collect()
        }
        HistogramDimension::Weather => Weather::ALL.iter().map(|v| v.as_str().into()).collect(),
        HistogramDimension::TimeOfDay => TimeOfDay::ALL.iter().map(|v| v.as_str().into()).collect(),
        HistogramDimension::StreetType => StreetScene::ALL.iter().map(|v| v.as_str().into()).collect(),
    }
}

/// Histogram over trips; frames are counted through their containing trip
/// by passing that trip once per frame. Every label of the dimension's
/// domain is present, including empty ones.
pub fn histogram<'a>(
    trips: impl IntoIterator<Item = &'a Trip>,
    dimension: HistogramDimension,
    model: Option<&ModelId>,
) -> Result<Vec<HistogramBin>, AnalyticsError> {
    let names = labels(dimension);
    let mut counts = vec![0u64; names.len()];
    let needs_model = matches!(
        dimension,
        HistogramDimension::AccuracyBin | HistogramDimension::PerplexityBin
    );
    if needs_model && model.is_none() {
        return Err(AnalyticsError::ModelRequired(dimension));
    }
    let pos = |s: &str| names.iter().position(|n| n == s).expect("label in domain");
    for trip in trips {
        let slot = match dimension {
            HistogramDimension::AccuracyBin | HistogramDimension::PerplexityBin => {
                let model = model.expect("checked");
                let agg = trip
                    .agg
                    .get(model)
                    .ok_or_else(|| AnalyticsError::UnknownModel(model.clone()))?;
                let binned = if dimension == HistogramDimension::AccuracyBin {
                    metric_bin(agg.accuracy, MetricKind::Accuracy)
                } else {
                    metric_bin(agg.mean_perplexity, MetricKind::Perplexity)
                };
                match binned {
                    Ok(b) => b.index(),
                    Err(_) => continue,
                }
            }
            HistogramDimension::Weather => pos(trip.conditions.weather.as_str()),
            HistogramDimension::TimeOfDay => pos(trip.conditions.time_of_day.as_str()),
            HistogramDimension::StreetType => pos(trip.conditions.street_scene.as_str()),
        };
        counts[slot] += 1;
    }
    Ok(names
        .into_iter()
        .zip(counts)
        .map(|(label, count)| HistogramBin { label, count })
        .collect())
}

/// Per-frame series of one trip, copied from the stored documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub trip_id: String,
    pub conditions: SpatialConditions,
    pub frame_idx: Vec<u32>,
    pub timestamp: Vec<i64>,
    pub location: Vec<LatLon>,
    pub speed: Vec<f64>,
    pub actual: Vec<ActionId>,
    pub predicted: BTreeMap<ModelId, Vec<ActionId>>,
    pub perplexity: BTreeMap<ModelId, Vec<f64>>,
    pub scores: BTreeMap<ModelId, Vec<ScoreVector>>,
}

pub fn trip_timeline(trip: &Trip) -> Timeline {
    let models = trip.models();
    let series = |f: &dyn Fn(&FrameDoc) -> f64| trip.frames.iter().map(f).collect::<Vec<_>>();
    Timeline {
        trip_id: trip.trip_id.clone(),
        conditions: trip.conditions,
        frame_idx: trip.frames.iter().map(|f| f.frame_idx).collect(),
        timestamp: trip.frames.iter().map(|f| f.timestamp).collect(),
        location: trip.frames.iter().map(|f| f.location).collect(),
        speed: series(&|f| f.speed),
        actual: trip.frames.iter().map(|f| f.actual).collect(),
        predicted: models
            .iter()
            .map(|m| (m.clone(), trip.frames.iter().filter_map(|f| f.predicted.get(m).copied()).collect()))
            .collect(),
        perplexity: models
            .iter()
            .map(|m| (m.clone(), trip.frames.iter().filter_map(|f| f.perplexity.get(m).copied()).collect()))
            .collect(),
        scores: models
            .iter()
            .map(|m| (m.clone(), trip.frames.iter().filter_map(|f| f.scores.get(m).copied()).collect()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::test_util::{model, trip_with};

    const GO: ActionId = ActionId::GoStraight;
    const LEFT: ActionId = ActionId::TurnLeft;

    fn derived(id: &str, frames: &[([f64; 4], ActionId)]) -> Trip {
        let mut t = trip_with(id, frames);
        t.derive_metrics(7).unwrap();
        t
    }

    fn pairs(trips: &[Trip]) -> Vec<(&FrameDoc, &Trip)> {
        trips.iter().flat_map(|t| t.frames.iter().map(move |f| (f, t))).collect()
    }

    #[test]
    fn aggregate_by_region() {
        let hit = ([1.0, 0.0, 0.0, 0.0], GO);
        let miss = ([1.0, 0.0, 0.0, 0.0], LEFT);
        let mut t = derived("t", &[hit, hit, hit, miss, miss]);
        for (i, f) in t.frames.iter_mut().enumerate() {
            f.region_id = Some(if i < 4 { "A" } else { "B" }.into());
        }
        let trips = vec![t];
        let reports = aggregate_by(pairs(&trips), GroupKey::Region, &[model("m")]);
        assert_eq!(reports.len(), 2);
        assert_eq!(reports[0].group_key, "A");
        assert_eq!(reports[0].count, 4);
        assert_eq!(reports[0].models[&model("m")].accuracy, Some(0.75));
        assert_eq!(reports[1].group_key, "B");
        assert_eq!(reports[1].models[&model("m")].accuracy, Some(0.0));
        assert!(aggregate_by(Vec::new(), GroupKey::Region, &[model("m")]).is_empty());
    }

    #[test]
    fn unmatched_frames_get_their_own_group() {
        let trips = vec![derived("t", &[([1.0; 4], GO); 3])];
        let reports = aggregate_by(pairs(&trips), GroupKey::Street, &[model("m")]);
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].group_key, UNMATCHED);
        assert_eq!(reports[0].count, 3);
    }

    #[test]
    fn combination_table_examples() {
        let hit = ([1.0, 0.0, 0.0, 0.0], GO);
        let miss = ([1.0, 0.0, 0.0, 0.0], LEFT);
        let mut frames = vec![hit; 7];
        frames.extend([miss; 3]);
        let t = derived("t", &frames);
        let table = combination_table(&t.frames, &[model("m")]).unwrap();
        assert_eq!(table.total, 10);
        assert_eq!(table.rows[0], CombinationRow { pattern: vec![false], count: 3 });
        assert_eq!(table.rows[1], CombinationRow { pattern: vec![true], count: 7 });
        assert!(combination_table(&t.frames, &[model("zz")]).is_err());
        let many: Vec<ModelId> = (0..9).map(|i| model(&format!("m{i}"))).collect();
        assert!(matches!(combination_table(&t.frames, &many), Err(AnalyticsError::TooManyModels(9))));
    }

    #[test]
    fn agreeing_models_fill_only_extreme_rows() {
        let mut t = derived("t", &[([1.0, 0.0, 0.0, 0.0], GO), ([1.0, 0.0, 0.0, 0.0], LEFT)]);
        for f in &mut t.frames {
            let c = f.correct[&model("m")];
            for extra in ["a", "b"] {
                f.correct.insert(model(extra), c);
            }
        }
        let models = [model("m"), model("a"), model("b")];
        let table = combination_table(&t.frames, &models).unwrap();
        assert_eq!(table.rows.len(), 8);
        assert_eq!(table.rows[0].pattern, vec![false, false, false]);
        assert_eq!(table.rows[7].pattern, vec![true, true, true]);
        let nonzero: Vec<usize> = table.rows.iter().enumerate().filter(|(_, r)| r.count > 0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![0, 7]);
    }

    #[test]
    fn histogram_of_trip_accuracies() {
        let m = model("m");
        let mut trips: Vec<Trip> = (0..3).map(|i| derived(&format!("t{i}"), &[([1.0; 4], GO)])).collect();
        for (t, acc) in trips.iter_mut().zip([0.64, 0.66, 0.91]) {
            t.agg.get_mut(&m).unwrap().accuracy = acc;
        }
        let h = histogram(&trips, HistogramDimension::AccuracyBin, Some(&m)).unwrap();
        assert_eq!(h.len(), 10);
        for bin in &h {
            let expected = match bin.label.as_str() {
                "60-70" => 2,
                "90-100" => 1,
                _ => 0,
            };
            assert_eq!(bin.count, expected, "{}", bin.label);
        }
        let empty = histogram(Vec::<&Trip>::new(), HistogramDimension::AccuracyBin, Some(&m)).unwrap();
        assert!(empty.iter().all(|b| b.count == 0));
        assert!(histogram(&trips, HistogramDimension::PerplexityBin, None).is_err());
    }

    #[test]
    fn histogram_over_fixed_domain() {
        let mut t = derived("t", &[([1.0; 4], GO); 4]);
        t.conditions.time_of_day = TimeOfDay::Night;
        let per_frame: Vec<&Trip> = t.frames.iter().map(|_| &t).collect();
        let h = histogram(per_frame, HistogramDimension::TimeOfDay, None).unwrap();
        let labels: Vec<&str> = h.iter().map(|b| b.label.as_str()).collect();
        assert_eq!(labels, vec!["day", "night", "dawn_dusk", "undefined"]);
        let counts: Vec<u64> = h.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![0, 4, 0, 0]);
    }

    #[test]
    fn timeline_copies_stored_values() {
        let t = derived(
            "t",
            &[([1.0, 0.0, 0.0, 0.0], GO), ([1.0, 0.0, 0.0, 0.0], GO), ([0.0, 0.0, 1.0, 0.0], GO)],
        );
        let tl = trip_timeline(&t);
        let m = model("m");
        assert_eq!(tl.speed.len(), 3);
        assert_eq!(tl.actual.len(), 3);
        assert_eq!(tl.predicted[&m], vec![GO, GO, LEFT]);
        assert_eq!(tl.perplexity[&m].len(), 3);
        for (f, p) in t.frames.iter().zip(&tl.perplexity[&m]) {
            assert_eq!(f.perplexity[&m], *p);
        }

        let uniform = derived("u", &[([1.0; 4], GO); 9]);
        let tl = trip_timeline(&uniform);
        assert!(tl.perplexity[&m].iter().all(|p| (p - 4.0).abs() < 1e-9));
    }
}
