//! Reference evaluation of queries by testing every frame directly, with
//! no index. Used to check the indexed engine.

use crate::doc::{FrameDoc, Trip};
use crate::geo;
use crate::metrics::{metric_bin, MetricKind};
use crate::store::Store;
use crate::types::ModelId;

use super::{closed_ring, FrameId, GridIndex, Predicate, QueryError, QueryExpr};

fn bin_matches(
    trip: &Trip,
    model: &Option<ModelId>,
    labels: &[crate::metrics::BinLabel],
    kind: MetricKind,
) -> bool {
    trip.agg
        .iter()
        .filter(|(m, _)| model.as_ref().is_none_or(|want| want == *m))
        .any(|(_, agg)| {
            let value = match kind {
                MetricKind::Accuracy => agg.accuracy,
                MetricKind::Perplexity => agg.mean_perplexity,
            };
            metric_bin(value, kind).is_ok_and(|b| labels.contains(&b))
        })
}

/// Whether one frame satisfies a predicate.
pub fn predicate_matches(p: &Predicate, frame: &FrameDoc, trip: &Trip) -> bool {
    let c = &trip.conditions;
    match p {
        Predicate::InRegionPolygon { ring } => {
            let ring = closed_ring(ring);
            geo::point_in_rings(&frame.location, [ring.as_slice()])
        }
        Predicate::OnStreet { segment_id } => frame.segment_id.as_ref() == Some(segment_id),
        Predicate::RegionId { ids } => frame.region_id.as_ref().is_some_and(|r| ids.contains(r)),
        Predicate::TimeOfDay { values } => values.contains(&c.time_of_day),
        Predicate::StreetType { values } => values.contains(&c.street_scene),
        Predicate::Weather { values } => values.contains(&c.weather),
        Predicate::ActualAction { actions } => actions.contains(&frame.actual),
        Predicate::PredictedAction { model, actions } => {
            frame.predicted.get(model).is_some_and(|a| actions.contains(a))
        }
        Predicate::AccuracyBin { model, labels } => {
            bin_matches(trip, model, labels, MetricKind::Accuracy)
        }
        Predicate::PerplexityBin { model, labels } => {
            bin_matches(trip, model, labels, MetricKind::Perplexity)
        }
        Predicate::CorrectnessPattern { pattern } => pattern
            .iter()
            .all(|(m, want)| frame.correct.get(m) == Some(want)),
    }
}

pub fn expr_matches(expr: &QueryExpr, frame: &FrameDoc, trip: &Trip) -> bool {
    match expr {
        QueryExpr::Pred(p) => predicate_matches(p, frame, trip),
        QueryExpr::And(c) => c.iter().all(|e| expr_matches(e, frame, trip)),
        QueryExpr::Or(c) => c.iter().any(|e| expr_matches(e, frame, trip)),
    }
}

/// Linear scan over every stored frame. Ids follow store order, the same
/// numbering [`GridIndex`] uses.
pub fn scan_frames(
    index: &GridIndex,
    store: &Store,
    expr: &QueryExpr,
) -> Result<Vec<FrameId>, QueryError> {
    index.validate(expr)?;
    let mut out = Vec::new();
    let mut id: FrameId = 0;
    for trip in store.trips() {
        for frame in &trip.frames {
            if expr_matches(expr, frame, trip) {
                out.push(id);
            }
            id += 1;
        }
    }
    Ok(out)
}
