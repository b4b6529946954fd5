//! Per-frame and per-sequence performance metrics: argmax prediction,
//! accuracy, sliding-window perplexity and the ten percentage bins used as
//! query conditions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doc::{FrameDoc, Trip, TripAggregate};
use crate::types::{ActionId, ModelId, ScoreVector};

/// Probabilities are floored here before taking a log.
pub const PROB_FLOOR: f64 = 1e-9;

/// Number of trailing predictions a perplexity value is computed from.
pub const DEFAULT_PERPLEXITY_WINDOW: usize = 7;

/// Number of distinct actions; the upper bound of perplexity.
pub const ACTION_COUNT: f64 = 4.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid score vector {scores:?}: {reason}")]
    InvalidScores { scores: [f64; 4], reason: &'static str },
    #[error("empty population")]
    EmptyPopulation,
    #[error("correct count {correct} exceeds total {total}")]
    CountOverflow { correct: u64, total: u64 },
    #[error("frame index {idx} out of range for {len} frames")]
    FrameOutOfRange { idx: usize, len: usize },
    #[error("frame {idx} has no scores for model {model}")]
    MissingModel { idx: usize, model: ModelId },
    #[error("{kind} value {value} outside its domain")]
    Domain { kind: MetricKind, value: f64 },
    #[error("unknown bin label {0:?}")]
    BadLabel(String),
    #[error("perplexity window must be at least 1")]
    ZeroWindow,
}

fn check_scores(scores: &ScoreVector) -> Result<(), MetricError> {
    let bad = |reason| MetricError::InvalidScores {
        scores: scores.0,
        reason,
    };
    if scores.0.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value"));
    }
    if scores.0.iter().any(|&v| v < 0.0) {
        return Err(bad("negative value"));
    }
    if scores.0.iter().all(|&v| v == 0.0) {
        return Err(bad("all values are zero"));
    }
    Ok(())
}

/// Argmax over the four action scores; ties go to the lowest action code.
pub fn predict_action(scores: &ScoreVector) -> Result<ActionId, MetricError> {
    check_scores(scores)?;
    let mut best = ActionId::GoStraight;
    for action in ActionId::ALL.into_iter().skip(1) {
        if scores.get(action) > scores.get(best) {
            best = action;
        }
    }
    Ok(best)
}

pub fn frame_accuracy(predicted: ActionId, actual: ActionId) -> u8 {
    u8::from(predicted == actual)
}

pub fn accuracy(correct: u64, total: u64) -> Result<f64, MetricError> {
    if total == 0 {
        return Err(MetricError::EmptyPopulation);
    }
    if correct > total {
        return Err(MetricError::CountOverflow { correct, total });
    }
    Ok(correct as f64 / total as f64)
}

/// Sum-normalises raw scores into a probability vector. The result is not
/// floored; use [`log_prob`] when a logarithm is needed.
pub fn normalize_scores(scores: &ScoreVector) -> Result<[f64; 4], MetricError> {
    check_scores(scores)?;
    let sum: f64 = scores.0.iter().sum();
    Ok(scores.0.map(|v| v / sum))
}

/// Natural log of a probability floored at [`PROB_FLOOR`].
pub fn log_prob(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Perplexity at `idx` over the trailing window of score vectors
/// `scores[idx + 1 - n ..= idx]`, `n = min(window, idx + 1)`, using the
/// normalised probability of each frame's argmax action.
pub fn perplexity_over(
    scores: &[ScoreVector],
    idx: usize,
    window: usize,
) -> Result<f64, MetricError> {
    if window == 0 {
        return Err(MetricError::ZeroWindow);
    }
    if idx >= scores.len() {
        return Err(MetricError::FrameOutOfRange {
            idx,
            len: scores.len(),
        });
    }
    let n = window.min(idx + 1);
    let mut log_sum = 0.0;
    for s in &scores[idx + 1 - n..=idx] {
        let probs = normalize_scores(s)?;
        let predicted = predict_action(s)?;
        log_sum += log_prob(probs[predicted.slot()]);
    }
    let value = (-log_sum / n as f64).exp();
    // The argmax probability is at least 1/4, so the exact value lies in
    // [1, 4]; pin rounding noise to the bounds.
    Ok(value.clamp(1.0, ACTION_COUNT))
}

/// Perplexity of `model` at frame `idx` of a trip.
pub fn perplexity_window(
    frames: &[FrameDoc],
    idx: usize,
    model: &ModelId,
    window: usize,
) -> Result<f64, MetricError> {
    if idx >= frames.len() {
        return Err(MetricError::FrameOutOfRange {
            idx,
            len: frames.len(),
        });
    }
    let start = idx + 1 - window.clamp(1, idx + 1);
    let scores = frames[start..=idx]
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.scores
                .get(model)
                .copied()
                .ok_or_else(|| MetricError::MissingModel {
                    idx: start + i,
                    model: model.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    perplexity_over(&scores, scores.len() - 1, window)
}

/// Accuracy and mean perplexity of one model over a trip's derived fields.
pub fn trip_aggregate(trip: &Trip, model: &ModelId) -> Result<TripAggregate, MetricError> {
    let total = trip.frames.len() as u64;
    let mut correct = 0u64;
    let mut perplexity_sum = 0.0;
    for (idx, frame) in trip.frames.iter().enumerate() {
        let missing = || MetricError::MissingModel {
            idx,
            model: model.clone(),
        };
        correct += u64::from(*frame.correct.get(model).ok_or_else(missing)?);
        perplexity_sum += frame.perplexity.get(model).ok_or_else(missing)?;
    }
    Ok(TripAggregate {
        accuracy: accuracy(correct, total)?,
        mean_perplexity: perplexity_sum / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Perplexity,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Perplexity => "perplexity",
        })
    }
}

/// One of the ten percentage bins `[0,10)`, `[10,20)`, …, `[90,100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinLabel(u8);

impl BinLabel {
    pub const COUNT: usize = 10;

    pub fn all() -> impl Iterator<Item = BinLabel> {
        (0..Self::COUNT as u8).map(BinLabel)
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn from_index(index: usize) -> Option<BinLabel> {
        (index < Self::COUNT).then_some(BinLabel(index as u8))
    }

    /// Bin for a percentage in `[0, 100]`.
    fn from_percent(percent: f64) -> BinLabel {
        // A tiny epsilon keeps values like 0.7 * 100 = 69.99.. in "70-80".
        let bin = ((percent + 1e-9) / 10.0).floor();
        BinLabel((bin.max(0.0) as u8).min(9))
    }

    pub fn lower(self) -> u32 {
        u32::from(self.0) * 10
    }
}

impl fmt::Display for BinLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lower(), self.lower() + 10)
    }
}

impl FromStr for BinLabel {
    type Err = MetricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BinLabel::all()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| MetricError::BadLabel(s.to_string()))
    }
}

impl Serialize for BinLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BinLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps an accuracy in `[0,1]` or a perplexity `≥ 1` to its percentage bin.
/// Perplexity is rescaled linearly from `[1, 4]` onto `[0, 100]`, with
/// larger values clamped to 100.
pub fn metric_bin(value: f64, kind: MetricKind) -> Result<BinLabel, MetricError> {
    let domain = || MetricError::Domain { kind, value };
    if !value.is_finite() {
        return Err(domain());
    }
    let percent = match kind {
        MetricKind::Accuracy => {
            if !(0.0..=1.0).contains(&value) {
                return Err(domain());
            }
            value * 100.0
        }
        MetricKind::Perplexity => {
            if value < 1.0 {
                return Err(domain());
            }
            ((value - 1.0) / (ACTION_COUNT - 1.0) * 100.0).min(100.0)
        }
    };
    Ok(BinLabel::from_percent(percent))
}
