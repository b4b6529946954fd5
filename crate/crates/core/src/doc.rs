//! Stored documents: one [`FrameDoc`] per prediction point, grouped into a
//! [`Trip`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::LatLon;
use crate::metrics::{self, MetricError};
use crate::types::{ActionId, ModelId, ScoreVector, SpatialConditions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DocError {
    #[error("trip {0:?} has no frames")]
    EmptyTrip(String),
    #[error("trip {trip_id:?} frame {frame_idx}: {reason}")]
    BadFrame {
        trip_id: String,
        frame_idx: u32,
        reason: String,
    },
}

/// Stable reference to a frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub trip_id: String,
    pub frame_idx: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDoc {
    pub trip_id: String,
    pub frame_idx: u32,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub location: LatLon,
    /// Meters per second.
    pub speed: f64,
    pub actual: ActionId,
    pub scores: BTreeMap<ModelId, ScoreVector>,
    #[serde(default)]
    pub predicted: BTreeMap<ModelId, ActionId>,
    #[serde(default)]
    pub correct: BTreeMap<ModelId, bool>,
    #[serde(default)]
    pub perplexity: BTreeMap<ModelId, f64>,
    #[serde(default)]
    pub segment_id: Option<String>,
    #[serde(default)]
    pub region_id: Option<String>,
    /// Frame image path relative to the dataset directory.
    pub image: String,
}

impl FrameDoc {
    pub fn image_path(trip_id: &str, frame_idx: u32) -> String {
        format!("frames/{trip_id}/{frame_idx}.png")
    }

    pub fn frame_ref(&self) -> FrameRef {
        FrameRef {
            trip_id: self.trip_id.clone(),
            frame_idx: self.frame_idx,
        }
    }

    /// Fills `predicted` and `correct` from the scores.
    pub fn derive_predictions(&mut self) -> Result<(), MetricError> {
        self.predicted.clear();
        self.correct.clear();
        for (model, scores) in &self.scores {
            let predicted = metrics::predict_action(scores)?;
            self.predicted.insert(model.clone(), predicted);
            self.correct
                .insert(model.clone(), metrics::frame_accuracy(predicted, self.actual) == 1);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripAggregate {
    pub accuracy: f64,
    pub mean_perplexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub trip_id: String,
    pub conditions: SpatialConditions,
    pub frames: Vec<FrameDoc>,
    #[serde(default)]
    pub agg: BTreeMap<ModelId, TripAggregate>,
}

impl Trip {
    /// Models scored in the first frame.
    pub fn models(&self) -> Vec<ModelId> {
        self.frames
            .first()
            .map(|f| f.scores.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Derives predictions, correctness, windowed perplexity and the trip
    /// aggregates from the stored scores. Matching fields are untouched.
    pub fn derive_metrics(&mut self, window: usize) -> Result<(), DocError> {
        self.validate_shape()?;
        let models = self.models();
        for frame in &mut self.frames {
            frame.derive_predictions().map_err(|e| DocError::BadFrame {
                trip_id: frame.trip_id.clone(),
                frame_idx: frame.frame_idx,
                reason: e.to_string(),
            })?;
        }
        for model in &models {
            let values = (0..self.frames.len())
                .map(|i| metrics::perplexity_window(&self.frames, i, model, window))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| self.frame_error(0, e))?;
            for (frame, value) in self.frames.iter_mut().zip(values) {
                frame.perplexity.insert(model.clone(), value);
            }
        }
        self.recompute_agg().map_err(|e| self.frame_error(0, e))
    }

    pub fn recompute_agg(&mut self) -> Result<(), MetricError> {
        let mut agg = BTreeMap::new();
        for model in self.models() {
            agg.insert(model.clone(), metrics::trip_aggregate(self, &model)?);
        }
        self.agg = agg;
        Ok(())
    }

    fn frame_error(&self, idx: usize, e: MetricError) -> DocError {
        let frame_idx = match &e {
            MetricError::MissingModel { idx, .. } | MetricError::FrameOutOfRange { idx, .. } => {
                *idx as u32
            }
            _ => idx as u32,
        };
        DocError::BadFrame {
            trip_id: self.trip_id.clone(),
            frame_idx,
            reason: e.to_string(),
        }
    }

    /// Structural checks: non-empty, consistent ids, strictly increasing
    /// frame indices, identical model sets, valid locations.
    pub fn validate_shape(&self) -> Result<(), DocError> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| DocError::EmptyTrip(self.trip_id.clone()))?;
        let models: Vec<&ModelId> = first.scores.keys().collect();
        let mut prev: Option<u32> = None;
        for frame in &self.frames {
            let bad = |reason: String| DocError::BadFrame {
                trip_id: self.trip_id.clone(),
                frame_idx: frame.frame_idx,
                reason,
            };
            if frame.trip_id != self.trip_id {
                return Err(bad(format!("belongs to trip {:?}", frame.trip_id)));
            }
            if prev.is_some_and(|p| frame.frame_idx <= p) {
                return Err(bad("frame indices not strictly increasing".into()));
            }
            prev = Some(frame.frame_idx);
            if frame.scores.keys().ne(models.iter().copied()) {
                return Err(bad("model set differs from the first frame".into()));
            }
            if models.is_empty() {
                return Err(bad("no model scores".into()));
            }
            frame.location.validate().map_err(|e| bad(e.to_string()))?;
            if !frame.speed.is_finite() {
                return Err(bad("speed is not finite".into()));
            }
        }
        Ok(())
    }
}
