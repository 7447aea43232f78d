//! Keypoint evaluation: masked coordinate MAE and visibility accuracy.
//!
//! For `N` frames of `C` keypoints with truth visibility `v`:
//!
//! ```text
//! masked MAE = 1/N Σ_i [ Σ_j v_ij (|x_ij - x̂_ij| + |y_ij - ŷ_ij|) / Σ_j v_ij ]
//! accuracy   = 1/N Σ_i 1/C Σ_j [round(p_ij) == v_ij]
//! ```
//!
//! Frames without a visible truth keypoint are left out of the MAE and
//! counted in [`MaskedMae::skipped_frames`]. Probabilities of exactly 0.5
//! round to visible.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{KeypointId, NormPoint, KEYPOINT_COUNT};
use crate::ingest::{FrameRecord, KeypointObservation};

#[derive(Debug, Error, PartialEq)]
pub enum KeypointEvalError {
    #[error("no frames to evaluate: {0}")]
    EmptyInput(String),
    #[error("misaligned batch: {0}")]
    Alignment(String),
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointPrediction {
    pub id: KeypointId,
    pub pos: NormPoint,
    pub visibility_prob: f64,
}

impl KeypointPrediction {
    pub fn new(id: KeypointId, x: f64, y: f64, visibility_prob: f64) -> Result<Self, KeypointEvalError> {
        if !(0.0..=1.0).contains(&visibility_prob) {
            return Err(KeypointEvalError::InvalidPrediction(format!(
                "keypoint {id}: visibility probability {visibility_prob} outside [0,1]"
            )));
        }
        let pos = NormPoint::new(x, y);
        if !pos.in_unit_square() {
            return Err(KeypointEvalError::InvalidPrediction(format!(
                "keypoint {id}: position ({x}, {y}) outside [0,1]²"
            )));
        }
        Ok(Self { id, pos, visibility_prob })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointPair {
    pub truth: KeypointObservation,
    pub pred: KeypointPrediction,
}

/// `N` frames of `C` aligned (truth, prediction) pairs. `C` is 12 for field
/// keypoints but any uniform positive count is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointEvalBatch {
    frames: Vec<Vec<KeypointPair>>,
}

impl KeypointEvalBatch {
    pub fn new(frames: Vec<Vec<KeypointPair>>) -> Result<Self, KeypointEvalError> {
        if let Some(first) = frames.first() {
            let c = first.len();
            if c == 0 {
                return Err(KeypointEvalError::Alignment("frames hold no keypoints".into()));
            }
            for (i, f) in frames.iter().enumerate() {
                if f.len() != c {
                    return Err(KeypointEvalError::Alignment(format!(
                        "frame {i} has {} keypoints, expected {c}",
                        f.len()
                    )));
                }
                if let Some(p) = f.iter().find(|p| p.truth.id != p.pred.id) {
                    return Err(KeypointEvalError::Alignment(format!(
                        "frame {i}: truth id {} paired with prediction id {}",
                        p.truth.id, p.pred.id
                    )));
                }
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Vec<KeypointPair>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMae {
    pub value: f64,
    pub evaluated_frames: usize,
    pub skipped_frames: usize,
}

/// Per-frame masked error; `None` when the frame has no visible truth.
pub fn frame_masked_error(frame: &[KeypointPair]) -> Option<f64> {
    let mut err = 0.0;
    let mut visible = 0usize;
    for p in frame.iter().filter(|p| p.truth.visible) {
        err += (p.truth.pos.x - p.pred.pos.x).abs() + (p.truth.pos.y - p.pred.pos.y).abs();
        visible += 1;
    }
    (visible > 0).then(|| err / visible as f64)
}

pub fn masked_mae(batch: &KeypointEvalBatch) -> Result<MaskedMae, KeypointEvalError> {
    let per_frame: Vec<Option<f64>> = batch.frames.iter().map(|f| frame_masked_error(f)).collect();
    reduce_masked_mae(&per_frame)
}

/// Sums per-frame errors in frame order.
pub fn reduce_masked_mae(per_frame: &[Option<f64>]) -> Result<MaskedMae, KeypointEvalError> {
    let evaluated: Vec<f64> = per_frame.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return Err(KeypointEvalError::EmptyInput("no frame has a visible keypoint".into()));
    }
    Ok(MaskedMae {
        value: evaluated.iter().sum::<f64>() / evaluated.len() as f64,
        evaluated_frames: evaluated.len(),
        skipped_frames: per_frame.len() - evaluated.len(),
    })
}

/// Round-half-up visibility decision.
pub fn predicted_visible(prob: f64) -> bool {
    prob >= 0.5
}

pub fn frame_visibility_accuracy(frame: &[KeypointPair]) -> f64 {
    let correct = frame
        .iter()
        .filter(|p| predicted_visible(p.pred.visibility_prob) == p.truth.visible)
        .count();
    correct as f64 / frame.len() as f64
}

pub fn visibility_accuracy(batch: &KeypointEvalBatch) -> Result<f64, KeypointEvalError> {
    if batch.is_empty() {
        return Err(KeypointEvalError::EmptyInput("empty batch".into()));
    }
    let total: f64 = batch.frames.iter().map(|f| frame_visibility_accuracy(f)).sum();
    Ok(total / batch.len() as f64)
}

/// Converts a normalized MAE to pixels with the factor `(W + H) / 2`.
pub fn mae_to_pixels(mae_norm: f64, image_w: f64, image_h: f64) -> f64 {
    mae_norm * (image_w + image_h) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointReport {
    pub accuracy: f64,
    pub mae_norm: f64,
    pub mae_pixels: f64,
    pub frames: usize,
    pub skipped_frames: usize,
}

pub fn keypoint_report(batch: &KeypointEvalBatch, image_w: f64, image_h: f64) -> Result<KeypointReport, KeypointEvalError> {
    let mae = masked_mae(batch)?;
    Ok(KeypointReport {
        accuracy: visibility_accuracy(batch)?,
        mae_norm: mae.value,
        mae_pixels: mae_to_pixels(mae.value, image_w, image_h),
        frames: batch.len(),
        skipped_frames: mae.skipped_frames,
    })
}

// ---------------------------------------------------------------------------
// Prediction file: JSON Lines, one frame per line, all 12 keypoints.
//
// {"frame_idx":0,"keypoints":[{"id":0,"x":0.31,"y":0.52,"prob":0.97}, ...]}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePrediction {
    id: i64,
    x: f64,
    y: f64,
    prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePredictionFrame {
    frame_idx: u64,
    keypoints: Vec<WirePrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub frame_idx: u64,
    /// Indexed by keypoint id.
    pub keypoints: [KeypointPrediction; KEYPOINT_COUNT],
}

pub fn parse_predictions<R: BufRead>(reader: R) -> Result<Vec<PredictionFrame>, KeypointEvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let rec_err = |message: String| KeypointEvalError::Record { line: line_no, message };
        let line = line.map_err(|e| rec_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WirePredictionFrame = serde_json::from_str(&line).map_err(|e| rec_err(e.to_string()))?;
        let mut slots: [Option<KeypointPrediction>; KEYPOINT_COUNT] = [None; KEYPOINT_COUNT];
        for k in wire.keypoints {
            let id = KeypointId::new(k.id).map_err(|e| rec_err(e.to_string()))?;
            let pred = KeypointPrediction::new(id, k.x, k.y, k.prob).map_err(|e| rec_err(e.to_string()))?;
            if slots[id.index()].replace(pred).is_some() {
                return Err(rec_err(format!("duplicate keypoint id {id}")));
            }
        }
        let mut keypoints = Vec::with_capacity(KEYPOINT_COUNT);
        for (i, s) in slots.into_iter().enumerate() {
            keypoints.push(s.ok_or_else(|| rec_err(format!("missing prediction for keypoint {i}")))?);
        }
        out.push(PredictionFrame {
            frame_idx: wire.frame_idx,
            keypoints: keypoints.try_into().expect("exactly 12 predictions"),
        });
    }
    Ok(out)
}

pub fn prediction_to_json(p: &PredictionFrame) -> String {
    let wire = WirePredictionFrame {
        frame_idx: p.frame_idx,
        keypoints: p
            .keypoints
            .iter()
            .map(|k| WirePrediction {
                id: k.id.into(),
                x: k.pos.x,
                y: k.pos.y,
                prob: k.visibility_prob,
            })
            .collect(),
    };
    serde_json::to_string(&wire).expect("predictions always serialize")
}

/// Pairs truth records with prediction frames by `frame_idx`. Truth keypoints
/// missing from a record count as invisible.
pub fn build_batch(truth: &[FrameRecord], preds: &[PredictionFrame]) -> Result<KeypointEvalBatch, KeypointEvalError> {
    let mut by_frame: HashMap<u64, &PredictionFrame> = HashMap::new();
    for p in preds {
        if by_frame.insert(p.frame_idx, p).is_some() {
            return Err(KeypointEvalError::Alignment(format!("prediction frame {} appears twice", p.frame_idx)));
        }
    }
    let mut truth_frames = BTreeMap::new();
    for t in truth {
        if truth_frames.insert(t.frame_idx, t).is_some() {
            return Err(KeypointEvalError::Alignment(format!("truth frame {} appears twice", t.frame_idx)));
        }
    }
    if let Some(extra) = by_frame.keys().find(|k| !truth_frames.contains_key(k)) {
        return Err(KeypointEvalError::Alignment(format!("prediction frame {extra} has no truth frame")));
    }
    let mut frames = Vec::with_capacity(truth_frames.len());
    for (idx, t) in truth_frames {
        let p = by_frame
            .get(&idx)
            .ok_or_else(|| KeypointEvalError::Alignment(format!("truth frame {idx} has no prediction frame")))?;
        let mut truth_slots: Vec<KeypointObservation> = KeypointId::all().map(KeypointObservation::hidden).collect();
        for k in &t.keypoints {
            truth_slots[k.id.index()] = *k;
        }
        frames.push(
            truth_slots
                .into_iter()
                .zip(p.keypoints.iter())
                .map(|(truth, pred)| KeypointPair { truth, pred: *pred })
                .collect(),
        );
    }
    KeypointEvalBatch::new(frames)
}
